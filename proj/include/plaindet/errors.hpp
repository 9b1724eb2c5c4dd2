#pragma once

#include <stdexcept>
#include <string>

namespace plaindet {

enum class ErrorKind {
  Shape,
  Config,
  Parse,
  Schema,
  MissingEmbedding,
  DegenerateEmbedding,
  ZeroRow,
  EmptyTable,
  UnknownDataset,
  Registration,
  InvalidLoss,
  InvalidBox,
  EmptySplit,
  MissingFile,
  CorruptCheckpoint,
  DivergedRun,
  Io,
};

// Single exception type for the whole library; `kind` lets callers and
// tests distinguish failure classes without a taxonomy of subclasses.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  static Error shape(const std::string& m) { return {ErrorKind::Shape, m}; }
  static Error config(const std::string& m) { return {ErrorKind::Config, m}; }
  static Error parse(const std::string& m) { return {ErrorKind::Parse, m}; }
  static Error schema(const std::string& m) { return {ErrorKind::Schema, m}; }
  static Error missing_embedding(const std::string& label) {
    return {ErrorKind::MissingEmbedding, "missing embedding for label \"" + label + "\""};
  }
  static Error degenerate_embedding(const std::string& label) {
    return {ErrorKind::DegenerateEmbedding,
            "embedding for \"" + label + "\" coincides with the NULL embedding"};
  }
  static Error zero_row(const std::string& m) { return {ErrorKind::ZeroRow, m}; }
  static Error empty_table(const std::string& m) { return {ErrorKind::EmptyTable, m}; }
  static Error unknown_dataset(const std::string& id) {
    return {ErrorKind::UnknownDataset, "unknown dataset \"" + id + "\""};
  }
  static Error registration(const std::string& m) { return {ErrorKind::Registration, m}; }
  static Error invalid_loss(const std::string& m) { return {ErrorKind::InvalidLoss, m}; }
  static Error invalid_box(const std::string& m) { return {ErrorKind::InvalidBox, m}; }
  static Error empty_split(const std::string& m) { return {ErrorKind::EmptySplit, m}; }
  static Error missing_file(const std::string& path) {
    return {ErrorKind::MissingFile, "missing file: " + path};
  }
  static Error corrupt_checkpoint(const std::string& m) {
    return {ErrorKind::CorruptCheckpoint, m};
  }
  static Error diverged_run(long step) {
    return {ErrorKind::DivergedRun,
            "training diverged (non-finite loss) at step " + std::to_string(step)};
  }
  static Error io(const std::string& m) { return {ErrorKind::Io, m}; }

 private:
  ErrorKind kind_;
};

}  // namespace plaindet
