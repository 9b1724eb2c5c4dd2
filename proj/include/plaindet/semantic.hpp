#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "plaindet/matrix.hpp"

namespace plaindet {

// Ordered class names for one dataset; order defines class indices.
struct LabelSpace {
  std::string dataset_id;
  std::vector<std::string> names;

  int size() const { return static_cast<int>(names.size()); }
  void validate() const;
};

// Raw per-label text embeddings plus the empty-string embedding.
struct EmbeddingTable {
  std::vector<std::string> labels;
  int dim = 0;
  Matrix vectors;                   // labels.size() x dim
  std::vector<double> null_vector;  // dim

  void validate() const;
};

// Frozen classifier rows: unit-norm calibrated label directions.
struct CalibratedClassifier {
  std::string dataset_id;
  std::vector<std::string> labels;
  Matrix matrix;  // m x dim

  int num_classes() const { return matrix.rows(); }
  int dim() const { return matrix.cols(); }
};

// Pluggable text encoder. embed_class() receives the class name and is
// responsible for prompting; embed_null() is the bare empty string.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  virtual std::vector<double> embed_class(const std::string& name) const = 0;
  virtual std::vector<double> embed_null() const = 0;
};

// Deterministic stand-in for a pretrained text encoder. Every prompt maps to
// a unit vector normalized(direction + beta * bias_direction) where the
// direction is hash-seeded and beta grows with a per-label pseudo-frequency;
// the empty string maps to the bias direction plus small noise. This
// reproduces the frequency-bias structure that calibration removes.
class SyntheticEncoder : public TextEncoder {
 public:
  struct Options {
    int dim = 64;
    std::uint64_t seed = 0;
    double beta_min = 1.0;
    double beta_max = 2.0;
    double null_noise = 0.02;
    std::map<std::string, double> beta_overrides;  // keyed by class name
  };

  explicit SyntheticEncoder(Options opt);

  int dim() const override { return opt_.dim; }
  std::vector<double> embed_class(const std::string& name) const override;
  std::vector<double> embed_null() const override;

  const Options& options() const { return opt_; }

 private:
  std::vector<double> encode_text(const std::string& text, double beta) const;
  double beta_for(const std::string& name) const;

  Options opt_;
  std::vector<double> bias_direction_;
};

// Serves pre-extracted embeddings from an EmbeddingTable (e.g. real vectors
// ingested from disk). Lookup is by class name; a miss is an error naming
// the label.
class FileEncoder : public TextEncoder {
 public:
  explicit FileEncoder(EmbeddingTable table);

  int dim() const override { return table_.dim; }
  std::vector<double> embed_class(const std::string& name) const override;
  std::vector<double> embed_null() const override { return table_.null_vector; }

 private:
  EmbeddingTable table_;
  std::map<std::string, int> index_;
};

inline constexpr const char* kPromptPrefix = "the photo is ";

std::vector<std::string> build_prompts(const LabelSpace& space);
EmbeddingTable encode_labels(const LabelSpace& space, const TextEncoder& encoder);

// Subtracts the NULL embedding from every row and L2-normalizes the result.
CalibratedClassifier calibrate(const EmbeddingTable& table, const std::string& dataset_id = "",
                               double eps = 1e-8);

Matrix similarity_matrix(const Matrix& rows);            // cosine; zero-norm row is an error
Matrix similarity_matrix(const CalibratedClassifier& c);
Matrix similarity_matrix(const EmbeddingTable& t);

double mean_abs_offdiagonal(const Matrix& sim);

void save_embeddings(const EmbeddingTable& table, const std::string& path);
EmbeddingTable load_embeddings(const std::string& path);

void save_classifier(const CalibratedClassifier& c, const std::string& path);
CalibratedClassifier load_classifier(const std::string& path);

}  // namespace plaindet
