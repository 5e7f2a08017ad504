#include "gimtp/encoder.hpp"
#include "gimtp/errors.hpp"

#include <cmath>

namespace gimtp::encoder {

namespace {

void check_square_stack(const Tensor& a, const char* what) {
  if (a.rank() != 3 || a.dim(1) != a.dim(2)) {
    throw DimensionError(std::string(what) + " must be T x N x N, got " + shape_string(a.shape()));
  }
}

}  // namespace

TransitionPair transition_matrices(const Tensor& adjacency) {
  check_square_stack(adjacency, "adjacency");
  const std::size_t T = adjacency.dim(0), N = adjacency.dim(1);
  TransitionPair p{Tensor(adjacency.shape()), Tensor(adjacency.shape())};
  for (std::size_t t = 0; t < T; ++t) {
    for (int dir = 0; dir < 2; ++dir) {
      Tensor& out = dir == 0 ? p.forward : p.backward;
      for (std::size_t i = 0; i < N; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          const double v = dir == 0 ? adjacency.at({t, i, j}) : adjacency.at({t, j, i});
          if (v < 0.0) throw ContractError("adjacency entries must be non-negative");
          total += v;
        }
        if (total <= 0.0) {
          out.at({t, i, i}) = 1.0;
          continue;
        }
        for (std::size_t j = 0; j < N; ++j) {
          const double v = dir == 0 ? adjacency.at({t, i, j}) : adjacency.at({t, j, i});
          out.at({t, i, j}) = v / total;
        }
      }
    }
  }
  return p;
}

Tensor chebyshev(std::size_t k, const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) != x.dim(1)) {
    throw DimensionError("chebyshev needs a square matrix, got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0);
  Tensor prev = Tensor::identity(n);
  if (k == 0) return prev;
  Tensor cur = x;
  for (std::size_t i = 2; i <= k; ++i) {
    Tensor next({n, n});
    next.as_matrix() = 2.0 * x.as_matrix() * cur.as_matrix() - prev.as_matrix();
    prev = std::move(cur);
    cur = std::move(next);
  }
  return cur;
}

std::vector<Tensor> diffusion_bases(const TransitionPair& p, std::size_t order) {
  if (order < 1) throw ConfigError("diffusion order must be at least 1");
  check_square_stack(p.forward, "forward transition");
  const std::size_t T = p.forward.dim(0), N = p.forward.dim(1);
  std::vector<Tensor> bases(2 * order, Tensor({T, N, N}));
  for (std::size_t t = 0; t < T; ++t) {
    for (int dir = 0; dir < 2; ++dir) {
      const Tensor& src = dir == 0 ? p.forward : p.backward;
      Tensor a({N, N});
      std::copy(src.raw() + t * N * N, src.raw() + (t + 1) * N * N, a.raw());
      Tensor prev = Tensor::identity(N);
      Tensor cur = a;
      for (std::size_t k = 1; k <= order; ++k) {
        if (k >= 2) {
          Tensor next({N, N});
          next.as_matrix() = 2.0 * a.as_matrix() * cur.as_matrix() - prev.as_matrix();
          prev = std::move(cur);
          cur = std::move(next);
        }
        Tensor& dst = bases[static_cast<std::size_t>(dir) * order + k - 1];
        std::copy(cur.raw(), cur.raw() + N * N, dst.raw() + t * N * N);
      }
    }
  }
  return bases;
}

std::vector<Tensor> last_step(const std::vector<Tensor>& bases) {
  std::vector<Tensor> out;
  for (const Tensor& b : bases) {
    check_square_stack(b, "basis");
    const std::size_t T = b.dim(0), N = b.dim(1);
    Tensor m({N, N});
    std::copy(b.raw() + (T - 1) * N * N, b.raw() + T * N * N, m.raw());
    out.push_back(std::move(m));
  }
  return out;
}

Tensor gcn_operator(const Tensor& adjacency) {
  check_square_stack(adjacency, "adjacency");
  const std::size_t T = adjacency.dim(0), N = adjacency.dim(1);
  Tensor out(adjacency.shape());
  std::vector<double> inv_sqrt(N);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < N; ++i) {
      double deg = 1.0;
      for (std::size_t j = 0; j < N; ++j) deg += adjacency.at({t, i, j});
      inv_sqrt[i] = 1.0 / std::sqrt(deg);
    }
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < N; ++j) {
        const double a = adjacency.at({t, i, j}) + (i == j ? 1.0 : 0.0);
        out.at({t, i, j}) = inv_sqrt[i] * a * inv_sqrt[j];
      }
    }
  }
  return out;
}

ad::Var dgcn_layer(ad::Var h, const std::vector<ad::Var>& bases, ad::Var theta) {
  if (h.value().rank() != 3) {
    throw DimensionError("dgcn_layer expects T x N x d input, got " + shape_string(h.shape()));
  }
  if (bases.empty()) throw ConfigError("dgcn_layer needs at least one basis");
  const std::size_t T = h.dim(0), N = h.dim(1), d_in = h.dim(2);
  if (theta.value().rank() != 2 || theta.dim(0) != bases.size() * d_in) {
    throw DimensionError("dgcn_layer: theta " + shape_string(theta.shape()) + " does not match " +
                         std::to_string(bases.size()) + " bases of width " + std::to_string(d_in));
  }
  const std::size_t d_out = theta.dim(1);
  ad::Var total;
  for (std::size_t b = 0; b < bases.size(); ++b) {
    ad::Var diffused = ad::reshape(ad::bmm(bases[b], h), {T * N, d_in});
    ad::Var term = ad::matmul(diffused, ad::slice(theta, b * d_in, (b + 1) * d_in));
    total = b == 0 ? term : ad::add(total, term);
  }
  return ad::reshape(total, {T, N, d_out});
}

ad::Var encode_stack(ad::Var x, const std::vector<ad::Var>& bases,
                     const std::array<ad::Var, 3>& thetas) {
  if (thetas[1].dim(0) != bases.size() * thetas[0].dim(1) ||
      thetas[1].dim(1) != thetas[0].dim(1)) {
    throw ConfigError("encode_stack: layer 2 must preserve layer 1 width for the residual");
  }
  ad::Var h1 = dgcn_layer(x, bases, thetas[0]);
  ad::Var h2 = ad::add(ad::relu(dgcn_layer(h1, bases, thetas[1])), h1);
  return dgcn_layer(h2, bases, thetas[2]);
}

Tensor similarity_rows(const Tensor& h, const std::vector<std::vector<bool>>& occupied) {
  if (h.rank() != 3) throw DimensionError("similarity_rows expects F x N x d");
  const std::size_t F = h.dim(0), N = h.dim(1), d = h.dim(2);
  Tensor out({F, N, N});
  for (std::size_t t = 0; t < F; ++t) {
    std::vector<double> norms(N);
    for (std::size_t i = 0; i < N; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += h.at({t, i, c}) * h.at({t, i, c});
      norms[i] = std::sqrt(s);
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (!occupied[t][i]) continue;
      double row = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        if (i == j || !occupied[t][j] || norms[i] == 0.0 || norms[j] == 0.0) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += h.at({t, i, c}) * h.at({t, j, c});
        const double sim = std::max(0.0, dot / (norms[i] * norms[j]));
        out.at({t, i, j}) = sim;
        row += sim;
      }
      if (row > 0.0) {
        for (std::size_t j = 0; j < N; ++j) out.at({t, i, j}) /= row;
      }
    }
  }
  return out;
}

}  // namespace gimtp::encoder
