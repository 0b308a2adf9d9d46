#pragma once

// Finite-difference coverage of every differentiable op. Shared between the
// unit tests and the acceptance suite. Each op is reduced to a scalar through
// a fixed random projection so the full Jacobian is exercised, not just its
// row sums.

#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace fd_suite {

using gradcheck::DTensor;
using duomodal::Rng;
using duomodal::Shape;

struct OpReport {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t instances = 0;
};

namespace detail {

inline DTensor project(const DTensor& out, const std::vector<double>& w) {
  auto wt = DTensor::from_vector(out.shape(),
                                 std::vector<double>(w.begin(), w.end()));
  return duomodal::sum(duomodal::mul(out, wt));
}

inline std::vector<double> rand_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = -1.0 + 2.0 * rng.uniform01();
  return v;
}

template <typename Fn>
void run_op(std::vector<OpReport>& reports, const std::string& name,
            std::size_t instances, std::uint64_t seed, Fn&& make_instance) {
  OpReport rep{name, 0.0, 0};
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng = duomodal::derive_rng(seed, name, {i});
    auto r = make_instance(rng);
    rep.max_rel_err = std::max(rep.max_rel_err, r.max_rel_err);
    rep.instances += 1;
  }
  reports.push_back(rep);
}

}  // namespace detail

inline std::vector<OpReport> run(std::size_t instances_per_op,
                                 std::uint64_t seed) {
  using namespace duomodal;
  using detail::project;
  using detail::rand_vec;
  std::vector<OpReport> reports;

  auto dims = [](Rng& rng, std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(rng.uniform_int(lo, hi));
  };

  detail::run_op(reports, "add", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t m = dims(rng, 1, 4), n = dims(rng, 1, 4);
    auto w = rand_vec(rng, m * n);
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) {
          return project(add(in[0], in[1]), w);
        },
        {{m, n}, {m, n}}, rng);
  });

  detail::run_op(reports, "mul", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t m = dims(rng, 1, 4), n = dims(rng, 1, 4);
    auto w = rand_vec(rng, m * n);
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) {
          return project(mul(in[0], in[1]), w);
        },
        {{m, n}, {m, n}}, rng);
  });

  detail::run_op(reports, "scale", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t n = dims(rng, 1, 6);
    const double c = -2.0 + 4.0 * rng.uniform01();
    auto w = rand_vec(rng, n);
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) {
          return project(scale(in[0], c), w);
        },
        {{n}}, rng);
  });

  detail::run_op(reports, "add_row_vector", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m = dims(rng, 1, 4), n = dims(rng, 1, 4);
                   auto w = rand_vec(rng, m * n);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(add_row_vector(in[0], in[1]), w);
                       },
                       {{m, n}, {n}}, rng);
                 });

  detail::run_op(reports, "gelu", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t m = dims(rng, 1, 4), n = dims(rng, 1, 4);
    auto w = rand_vec(rng, m * n);
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) {
          return project(gelu(in[0]), w);
        },
        {{m, n}}, rng, -2.0, 2.0);
  });

  detail::run_op(reports, "matmul", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t m = dims(rng, 1, 4), k = dims(rng, 1, 4),
                      n = dims(rng, 1, 4);
    auto w = rand_vec(rng, m * n);
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) {
          return project(matmul(in[0], in[1]), w);
        },
        {{m, k}, {k, n}}, rng);
  });

  detail::run_op(reports, "matmul_nt", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t m = dims(rng, 1, 4), k = dims(rng, 1, 4),
                      n = dims(rng, 1, 4);
    auto w = rand_vec(rng, m * n);
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) {
          return project(matmul_nt(in[0], in[1]), w);
        },
        {{m, k}, {n, k}}, rng);
  });

  detail::run_op(reports, "transpose", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t m = dims(rng, 1, 4), n = dims(rng, 1, 4);
    auto w = rand_vec(rng, m * n);
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) {
          return project(transpose(in[0]), w);
        },
        {{m, n}}, rng);
  });

  detail::run_op(reports, "softmax_rows", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m = dims(rng, 1, 4), n = dims(rng, 2, 6);
                   auto w = rand_vec(rng, m * n);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(softmax_rows(in[0]), w);
                       },
                       {{m, n}}, rng, -3.0, 3.0);
                 });

  detail::run_op(reports, "softmax_axis0", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m = dims(rng, 2, 5), n = dims(rng, 1, 4);
                   auto w = rand_vec(rng, m * n);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(softmax(in[0], 0), w);
                       },
                       {{m, n}}, rng, -3.0, 3.0);
                 });

  detail::run_op(reports, "layer_norm", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m = dims(rng, 1, 4), d = dims(rng, 2, 6);
                   auto w = rand_vec(rng, m * d);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(layer_norm(in[0], in[1], in[2]), w);
                       },
                       {{m, d}, {d}, {d}}, rng);
                 });

  detail::run_op(reports, "slice_cols", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m = dims(rng, 1, 4), n = dims(rng, 2, 6);
                   const std::size_t len = dims(rng, 1, n);
                   const std::size_t start = dims(rng, 0, n - len);
                   auto w = rand_vec(rng, m * len);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(slice_cols(in[0], start, len), w);
                       },
                       {{m, n}}, rng);
                 });

  detail::run_op(reports, "concat_cols", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m = dims(rng, 1, 3), n1 = dims(rng, 1, 3),
                                     n2 = dims(rng, 1, 3);
                   auto w = rand_vec(rng, m * (n1 + n2));
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(concat_cols<double>({in[0], in[1]}), w);
                       },
                       {{m, n1}, {m, n2}}, rng);
                 });

  detail::run_op(reports, "concat_rows", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m1 = dims(rng, 1, 3),
                                     m2 = dims(rng, 1, 3), n = dims(rng, 1, 4);
                   auto w = rand_vec(rng, (m1 + m2) * n);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(concat_rows(in[0], in[1]), w);
                       },
                       {{m1, n}, {m2, n}}, rng);
                 });

  detail::run_op(reports, "blend_rows", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m = dims(rng, 2, 5), n = dims(rng, 1, 4);
                   std::vector<std::uint8_t> mask(m);
                   for (auto& b : mask) b = rng.uniform01() < 0.5 ? 1 : 0;
                   auto w = rand_vec(rng, m * n);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(blend_rows(in[0], in[1], mask), w);
                       },
                       {{m, n}, {m, n}}, rng);
                 });

  detail::run_op(reports, "mean_rows_masked", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t m = dims(rng, 1, 5), n = dims(rng, 1, 4);
                   std::vector<std::uint8_t> mask(m, 0);
                   mask[rng.uniform_int(0, m - 1)] = 1;
                   for (auto& b : mask) b |= rng.uniform01() < 0.5 ? 1 : 0;
                   auto w = rand_vec(rng, n);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(mean_rows_masked(in[0], mask), w);
                       },
                       {{m, n}}, rng);
                 });

  detail::run_op(reports, "embedding_lookup", instances_per_op, seed,
                 [&](Rng& rng) {
                   const std::size_t V = dims(rng, 2, 6), d = dims(rng, 1, 4);
                   const std::size_t L = dims(rng, 1, 5);
                   std::vector<std::int64_t> ids(L);
                   for (auto& id : ids)
                     id = static_cast<std::int64_t>(rng.uniform_int(0, V - 1));
                   auto w = rand_vec(rng, L * d);
                   return gradcheck::check(
                       [&](const std::vector<DTensor>& in) {
                         return project(embedding_lookup(in[0], ids), w);
                       },
                       {{V, d}}, rng);
                 });

  detail::run_op(reports, "sum", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t m = dims(rng, 1, 4), n = dims(rng, 1, 4);
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) { return sum(in[0]); },
        {{m, n}}, rng);
  });

  detail::run_op(
      reports, "cross_entropy", instances_per_op, seed, [&](Rng& rng) {
        const std::size_t L = dims(rng, 1, 5), V = dims(rng, 2, 6);
        std::vector<std::int64_t> targets(L);
        for (auto& t : targets)
          t = static_cast<std::int64_t>(rng.uniform_int(0, V - 1));
        std::vector<std::uint8_t> mask(L, 0);
        mask[rng.uniform_int(0, L - 1)] = 1;
        for (auto& b : mask) b |= rng.uniform01() < 0.5 ? 1 : 0;
        return gradcheck::check(
            [&](const std::vector<DTensor>& in) {
              return cross_entropy(in[0], targets, mask);
            },
            {{L, V}}, rng, -2.0, 2.0);
      });

  detail::run_op(reports, "l1_loss", instances_per_op, seed, [&](Rng& rng) {
    const std::size_t L = dims(rng, 1, 4), F = dims(rng, 1, 4);
    std::vector<std::uint8_t> mask(L, 0);
    mask[rng.uniform_int(0, L - 1)] = 1;
    for (auto& b : mask) b |= rng.uniform01() < 0.5 ? 1 : 0;
    // keep |pred - target| away from the kink so the FD probe stays valid
    std::vector<double> offs(L * F);
    for (auto& o : offs)
      o = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * (0.2 + 0.8 * rng.uniform01());
    return gradcheck::check(
        [&](const std::vector<DTensor>& in) {
          auto offset = DTensor::from_vector({L, F}, offs);
          return l1_loss(in[0], add(in[1], offset), mask);
        },
        {{L, F}, {L, F}}, rng, -0.05, 0.05);
  });

  detail::run_op(
      reports, "composite_graph", instances_per_op, seed, [&](Rng& rng) {
        const std::size_t B = dims(rng, 1, 3), din = dims(rng, 2, 4),
                          dh = dims(rng, 2, 5), V = dims(rng, 2, 4);
        std::vector<std::int64_t> targets(B);
        for (auto& t : targets)
          t = static_cast<std::int64_t>(rng.uniform_int(0, V - 1));
        return gradcheck::check(
            [&](const std::vector<DTensor>& in) {
              auto h = add_row_vector(matmul(in[0], in[1]), in[2]);
              auto a = gelu(h);
              auto nrm = layer_norm(a, in[3], in[4]);
              auto logits = matmul(nrm, in[5]);
              auto ce = cross_entropy(logits, targets);
              auto rec = sum(mul(softmax_rows(logits),
                                 softmax_rows(matmul(in[0], in[6]))));
              return add(ce, scale(rec, 0.5));
            },
            {{B, din}, {din, dh}, {dh}, {dh}, {dh}, {dh, V}, {din, V}}, rng);
      });

  return reports;
}

}  // namespace fd_suite
