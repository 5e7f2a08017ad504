#pragma once

#include "gimtp/autograd.hpp"
#include "gimtp/tensor.hpp"

#include <array>
#include <vector>

namespace gimtp::encoder {

// Row-normalized A and A^T per timestep; all-zero rows become self-loops.
struct TransitionPair {
  Tensor forward;   // T x N x N
  Tensor backward;  // T x N x N
};

TransitionPair transition_matrices(const Tensor& adjacency);

// T_0 = I, T_1 = X, T_k = 2 X T_{k-1} - T_{k-2}.
Tensor chebyshev(std::size_t k, const Tensor& x);

// Diffusion operators for one layer, ordered (forward k=1..K, backward
// k=1..K); each is T x N x N.
std::vector<Tensor> diffusion_bases(const TransitionPair& p, std::size_t order);

// Same bases restricted to the last timestep (N x N each).
std::vector<Tensor> last_step(const std::vector<Tensor>& bases);

// D^{-1/2} (A + I) D^{-1/2} per timestep.
Tensor gcn_operator(const Tensor& adjacency);

// H' = sum_b basis_b H theta_b, theta stacked as [bases * d_in, d_out].
ad::Var dgcn_layer(ad::Var h, const std::vector<ad::Var>& bases, ad::Var theta);

// H_1 = L1(X); H_2 = relu(L2(H_1)) + H_1; H_o = L3(H_2).
ad::Var encode_stack(ad::Var x, const std::vector<ad::Var>& bases,
                     const std::array<ad::Var, 3>& thetas);

// Cosine similarity of node embeddings at each step, negatives clipped and
// rows normalized to sum to 1 (zero rows stay zero). H is F x N x d.
Tensor similarity_rows(const Tensor& h, const std::vector<std::vector<bool>>& occupied);

}  // namespace gimtp::encoder
