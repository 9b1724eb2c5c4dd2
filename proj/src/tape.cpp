#include "plaindet/tape.hpp"

#include <cmath>

namespace plaindet {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw Error::shape(std::string(op) + ": shape mismatch");
}

}  // namespace

Var Tape::emit(Matrix value, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Matrix value, bool requires_grad) {
  return emit(std::move(value), requires_grad, nullptr);
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = val(a);
  const Matrix& bv = val(b);
  check_same_shape(av, bv, "add");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
  nodes_.back().backward = [a, b, c](Tape& t) {
    const Matrix& g = t.grad(c);
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  };
  return c;
}

Var Tape::sub(Var a, Var b) {
  const Matrix& av = val(a);
  const Matrix& bv = val(b);
  check_same_shape(av, bv, "sub");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
  nodes_.back().backward = [a, b, c](Tape& t) {
    const Matrix& g = t.grad(c);
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return c;
}

Var Tape::mul(Var a, Var b) {
  const Matrix& av = val(a);
  const Matrix& bv = val(b);
  check_same_shape(av, bv, "mul");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
  nodes_.back().backward = [a, b, c](Tape& t) {
    const Matrix& g = t.grad(c);
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad_mut(a);
      const Matrix& bv2 = t.val(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad_mut(b);
      const Matrix& av2 = t.val(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  };
  return c;
}

Var Tape::div(Var a, Var b) {
  const Matrix& av = val(a);
  const Matrix& bv = val(b);
  check_same_shape(av, bv, "div");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
  nodes_.back().backward = [a, b, c](Tape& t) {
    const Matrix& g = t.grad(c);
    const Matrix& bv2 = t.val(b);
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv2[i];
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad_mut(b);
      const Matrix& cv = t.val(c);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * cv[i] / bv2[i];
    }
  };
  return c;
}

Var Tape::scale(Var a, double s) {
  Matrix out = val(a);
  for (auto& x : out.data()) x *= s;
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c, s](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  };
  return c;
}

Var Tape::add_scalar(Var a, double s) {
  Matrix out = val(a);
  for (auto& x : out.data()) x += s;
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return c;
}

Var Tape::sub_from_scalar(double s, Var a) {
  Matrix out = val(a);
  for (auto& x : out.data()) x = s - x;
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  };
  return c;
}

Var Tape::emin(Var a, Var b) {
  const Matrix& av = val(a);
  const Matrix& bv = val(b);
  check_same_shape(av, bv, "emin");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] <= bv[i] ? av[i] : bv[i];
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
  nodes_.back().backward = [a, b, c](Tape& t) {
    const Matrix& g = t.grad(c);
    const Matrix& av2 = t.val(a);
    const Matrix& bv2 = t.val(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av2[i] <= bv2[i]) {
        if (t.requires_grad(a)) t.grad_mut(a)[i] += g[i];
      } else if (t.requires_grad(b)) {
        t.grad_mut(b)[i] += g[i];
      }
    }
  };
  return c;
}

Var Tape::emax(Var a, Var b) {
  const Matrix& av = val(a);
  const Matrix& bv = val(b);
  check_same_shape(av, bv, "emax");
  Matrix out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] >= bv[i] ? av[i] : bv[i];
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
  nodes_.back().backward = [a, b, c](Tape& t) {
    const Matrix& g = t.grad(c);
    const Matrix& av2 = t.val(a);
    const Matrix& bv2 = t.val(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av2[i] >= bv2[i]) {
        if (t.requires_grad(a)) t.grad_mut(a)[i] += g[i];
      } else if (t.requires_grad(b)) {
        t.grad_mut(b)[i] += g[i];
      }
    }
  };
  return c;
}

Var Tape::abs(Var a) {
  Matrix out = val(a);
  for (auto& x : out.data()) x = std::fabs(x);
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    const Matrix& av = t.val(a);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0)
        ga[i] += g[i];
      else if (av[i] < 0.0)
        ga[i] -= g[i];
    }
  };
  return c;
}

Var Tape::matmul(Var a, Var b) {
  Matrix out = plaindet::matmul(val(a), val(b));
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
  nodes_.back().backward = [a, b, c](Tape& t) {
    const Matrix& g = t.grad(c);
    if (t.requires_grad(a)) {
      Matrix da = plaindet::matmul_nt(g, t.val(b));
      Matrix& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < da.size(); ++i) ga[i] += da[i];
    }
    if (t.requires_grad(b)) {
      Matrix db = plaindet::matmul_tn(t.val(a), g);
      Matrix& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
    }
  };
  return c;
}

Var Tape::matmul_nt(Var a, Var b) {
  Matrix out = plaindet::matmul_nt(val(a), val(b));
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(b), nullptr);
  nodes_.back().backward = [a, b, c](Tape& t) {
    const Matrix& g = t.grad(c);
    if (t.requires_grad(a)) {
      Matrix da = plaindet::matmul(g, t.val(b));
      Matrix& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < da.size(); ++i) ga[i] += da[i];
    }
    if (t.requires_grad(b)) {
      Matrix db = plaindet::matmul_tn(g, t.val(a));
      Matrix& gb = t.grad_mut(b);
      for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
    }
  };
  return c;
}

Var Tape::add_rowvec(Var a, Var rowv) {
  const Matrix& av = val(a);
  const Matrix& rv = val(rowv);
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw Error::shape("add_rowvec: row vector width mismatch");
  Matrix out = av;
  for (int i = 0; i < out.rows(); ++i) {
    double* r = out.row(i);
    for (int j = 0; j < out.cols(); ++j) r[j] += rv[j];
  }
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(rowv), nullptr);
  nodes_.back().backward = [a, rowv, c](Tape& t) {
    const Matrix& g = t.grad(c);
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad_mut(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(rowv)) {
      Matrix& gr = t.grad_mut(rowv);
      for (int i = 0; i < g.rows(); ++i) {
        const double* r = g.row(i);
        for (int j = 0; j < g.cols(); ++j) gr[j] += r[j];
      }
    }
  };
  return c;
}

Var Tape::reshape(Var a, int rows, int cols) {
  const Matrix& av = val(a);
  if (static_cast<std::size_t>(rows) * cols != av.size())
    throw Error::shape("reshape: element count mismatch");
  Matrix out(rows, cols, av.data());
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return c;
}

Var Tape::tanh(Var a) {
  Matrix out = val(a);
  for (auto& x : out.data()) x = std::tanh(x);
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    const Matrix& cv = t.val(c);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - cv[i] * cv[i]);
  };
  return c;
}

Var Tape::sigmoid(Var a) {
  Matrix out = val(a);
  for (auto& x : out.data()) x = 1.0 / (1.0 + std::exp(-x));
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    const Matrix& cv = t.val(c);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * cv[i] * (1.0 - cv[i]);
  };
  return c;
}

Var Tape::softplus(Var a) {
  Matrix out = val(a);
  for (auto& x : out.data()) {
    // max(x,0) + log1p(exp(-|x|)) is overflow-safe for either sign
    double m = x > 0.0 ? x : 0.0;
    x = m + std::log1p(std::exp(-std::fabs(x)));
  }
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    const Matrix& av = t.val(a);
    Matrix& ga = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] / (1.0 + std::exp(-av[i]));
  };
  return c;
}

Var Tape::row_softmax(Var a) {
  Matrix out = val(a);
  for (int i = 0; i < out.rows(); ++i) {
    double* r = out.row(i);
    double mx = r[0];
    for (int j = 1; j < out.cols(); ++j) mx = std::max(mx, r[j]);
    double s = 0.0;
    for (int j = 0; j < out.cols(); ++j) {
      r[j] = std::exp(r[j] - mx);
      s += r[j];
    }
    for (int j = 0; j < out.cols(); ++j) r[j] /= s;
  }
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    const Matrix& y = t.val(c);
    Matrix& ga = t.grad_mut(a);
    for (int i = 0; i < g.rows(); ++i) {
      const double* gr = g.row(i);
      const double* yr = y.row(i);
      double dotv = 0.0;
      for (int j = 0; j < g.cols(); ++j) dotv += gr[j] * yr[j];
      double* gar = ga.row(i);
      for (int j = 0; j < g.cols(); ++j) gar[j] += yr[j] * (gr[j] - dotv);
    }
  };
  return c;
}

Var Tape::l2_normalize_rows(Var a, double eps) {
  const Matrix& av = val(a);
  Matrix out = av;
  for (int i = 0; i < out.rows(); ++i) {
    double s = 0.0;
    const double* r = av.row(i);
    for (int j = 0; j < av.cols(); ++j) s += r[j] * r[j];
    double n = std::sqrt(s + eps * eps);
    double* o = out.row(i);
    for (int j = 0; j < av.cols(); ++j) o[j] = r[j] / n;
  }
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c, eps](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    const Matrix& av2 = t.val(a);
    const Matrix& y = t.val(c);
    Matrix& ga = t.grad_mut(a);
    for (int i = 0; i < g.rows(); ++i) {
      double s = 0.0;
      const double* r = av2.row(i);
      for (int j = 0; j < av2.cols(); ++j) s += r[j] * r[j];
      double n = std::sqrt(s + eps * eps);
      const double* gr = g.row(i);
      const double* yr = y.row(i);
      double dotv = 0.0;
      for (int j = 0; j < g.cols(); ++j) dotv += gr[j] * yr[j];
      double* gar = ga.row(i);
      for (int j = 0; j < g.cols(); ++j) gar[j] += (gr[j] - yr[j] * dotv) / n;
    }
  };
  return c;
}

Var Tape::layer_norm_rows(Var a, Var gamma, Var beta, double eps) {
  const Matrix& av = val(a);
  const Matrix& gv = val(gamma);
  const Matrix& bv = val(beta);
  if (gv.rows() != 1 || gv.cols() != av.cols() || bv.rows() != 1 || bv.cols() != av.cols())
    throw Error::shape("layer_norm_rows: gamma/beta width mismatch");
  const int d = av.cols();
  Matrix out(av.rows(), d);
  for (int i = 0; i < av.rows(); ++i) {
    const double* r = av.row(i);
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += r[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    double* o = out.row(i);
    for (int j = 0; j < d; ++j) o[j] = gv[j] * ((r[j] - mu) * inv) + bv[j];
  }
  Var c = emit(std::move(out), requires_grad(a) || requires_grad(gamma) || requires_grad(beta),
               nullptr);
  nodes_.back().backward = [a, gamma, beta, c, eps](Tape& t) {
    const Matrix& g = t.grad(c);
    const Matrix& av2 = t.val(a);
    const Matrix& gv2 = t.val(gamma);
    const int d = av2.cols();
    for (int i = 0; i < av2.rows(); ++i) {
      const double* r = av2.row(i);
      double mu = 0.0;
      for (int j = 0; j < d; ++j) mu += r[j];
      mu /= d;
      double var = 0.0;
      for (int j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
      var /= d;
      double inv = 1.0 / std::sqrt(var + eps);
      const double* gr = g.row(i);
      if (t.requires_grad(gamma)) {
        Matrix& gg = t.grad_mut(gamma);
        for (int j = 0; j < d; ++j) gg[j] += gr[j] * ((r[j] - mu) * inv);
      }
      if (t.requires_grad(beta)) {
        Matrix& gb = t.grad_mut(beta);
        for (int j = 0; j < d; ++j) gb[j] += gr[j];
      }
      if (t.requires_grad(a)) {
        // dx = inv * (h - mean(h) - xhat * mean(h . xhat)), h = g . gamma
        double mean_h = 0.0, mean_hx = 0.0;
        for (int j = 0; j < d; ++j) {
          double h = gr[j] * gv2[j];
          double xh = (r[j] - mu) * inv;
          mean_h += h;
          mean_hx += h * xh;
        }
        mean_h /= d;
        mean_hx /= d;
        Matrix& ga = t.grad_mut(a);
        double* gar = ga.row(i);
        for (int j = 0; j < d; ++j) {
          double h = gr[j] * gv2[j];
          double xh = (r[j] - mu) * inv;
          gar[j] += inv * (h - mean_h - xh * mean_hx);
        }
      }
    }
  };
  return c;
}

Var Tape::maxpool_rows(Var a) {
  const Matrix& av = val(a);
  if (av.rows() < 1) throw Error::shape("maxpool_rows: empty input");
  Matrix out(1, av.cols());
  std::vector<int> argmax(av.cols(), 0);
  for (int j = 0; j < av.cols(); ++j) {
    double best = av.at(0, j);
    int bi = 0;
    for (int i = 1; i < av.rows(); ++i) {
      if (av.at(i, j) > best) {
        best = av.at(i, j);
        bi = i;
      }
    }
    out[j] = best;
    argmax[j] = bi;
  }
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c, argmax](Tape& t) {
    if (!t.requires_grad(a)) return;
    const Matrix& g = t.grad(c);
    Matrix& ga = t.grad_mut(a);
    for (int j = 0; j < g.cols(); ++j) ga.at(argmax[j], j) += g[j];
  };
  return c;
}

Var Tape::sum_all(Var a) {
  const Matrix& av = val(a);
  double s = 0.0;
  for (double v : av.data()) s += v;
  Matrix out(1, 1);
  out[0] = s;
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c](Tape& t) {
    if (!t.requires_grad(a)) return;
    double g = t.grad(c)[0];
    Matrix& ga = t.grad_mut(a);
    for (auto& x : ga.data()) x += g;
  };
  return c;
}

Var Tape::mean_all(Var a) {
  const Matrix& av = val(a);
  double s = 0.0;
  for (double v : av.data()) s += v;
  double n = static_cast<double>(av.size());
  Matrix out(1, 1);
  out[0] = s / n;
  Var c = emit(std::move(out), requires_grad(a), nullptr);
  nodes_.back().backward = [a, c, n](Tape& t) {
    if (!t.requires_grad(a)) return;
    double g = t.grad(c)[0] / n;
    Matrix& ga = t.grad_mut(a);
    for (auto& x : ga.data()) x += g;
  };
  return c;
}

void Tape::backward(Var loss) {
  const Matrix& lv = val(loss);
  if (lv.rows() != 1 || lv.cols() != 1)
    throw Error::shape("backward: loss must be a 1x1 node");
  for (auto& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
  nodes_[loss.id].grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].requires_grad && nodes_[i].backward) nodes_[i].backward(*this);
  }
}

}  // namespace plaindet
