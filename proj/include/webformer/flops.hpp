#pragma once

#include <cstdint>

#include <json.hpp>

#include "webformer/model.hpp"
#include "webformer/topology.hpp"

namespace webformer {

/// Multiply-adds of one forward pass, split by attention pattern. An
/// attention entry (query i, key j) costs d for the logit plus d for the
/// value mix, and another d when an edge or relative vector is added to the
/// key. Projections cover the Q/K/V matmuls of enabled patterns; `ffn` also
/// holds the output projections.
struct FlopCount {
  std::uint64_t h2h = 0;
  std::uint64_t h2t = 0;
  std::uint64_t t2h = 0;
  std::uint64_t t2t = 0;
  std::uint64_t f2h = 0;
  std::uint64_t projections = 0;
  std::uint64_t ffn = 0;

  std::uint64_t attention() const { return h2h + h2t + t2h + t2t + f2h; }
  std::uint64_t total() const { return attention() + projections + ffn; }

  nlohmann::json to_json() const {
    return {{"h2h", h2h}, {"h2t", h2t}, {"t2h", t2h}, {"t2t", t2t}, {"f2h", f2h},
            {"projections", projections}, {"ffn", ffn}, {"attention", attention()}, {"total", total()}};
  }
};

inline FlopCount flop_count(const ModelConfig& cfg, const AttentionTopology& topo) {
  using u64 = std::uint64_t;
  const u64 d = static_cast<u64>(cfg.hidden);
  const u64 f = static_cast<u64>(cfg.ffn);
  const u64 nh = topo.n_html, nt = topo.n_text;
  const auto& fl = cfg.flags;
  FlopCount one;
  auto proj = [&](u64 queries, u64 keys) { return queries * d * d + 2 * keys * d * d; };

  if (fl.h2h) {
    one.h2h = topo.h2h.nnz() * 3 * d;
    one.projections += proj(nh, nh + (topo.field_edges ? 1 : 0));
  } else if (fl.h2f && topo.field_edges) {
    one.h2h = nh * 3 * d;
    one.projections += proj(nh, 1);
  }
  if (fl.h2t) {
    one.h2t = topo.h2t.nnz() * 2 * d;
    one.projections += proj(nh, nt);
  }
  if (fl.t2h) {
    one.t2h = nt * nh * 2 * d;
    one.projections += proj(nt, nh);
  } else if (fl.h2f && topo.field_edges) {
    one.t2h = nt * 2 * d;
    one.projections += proj(nt, 1);
  }
  if (fl.t2t) {
    one.t2t = topo.dense_text ? nt * nt * 2 * d : topo.t2t.nnz() * 3 * d;
    one.projections += proj(nt, nt);
  }
  one.f2h = nh * 2 * d;
  one.projections += proj(1, nh);
  const u64 rows = 1 + nh + nt;
  one.ffn = rows * d * d + 2 * rows * d * f;

  const u64 L = static_cast<u64>(cfg.layers);
  return {one.h2h * L, one.h2t * L, one.t2h * L, one.t2t * L, one.f2h * L, one.projections * L, one.ffn * L};
}

/// Attention cost of a standard transformer over `n` tokens: every pair,
/// logit plus value mix, every layer.
inline std::uint64_t full_attention_flops(const ModelConfig& cfg, std::uint64_t n) {
  return static_cast<std::uint64_t>(cfg.layers) * n * n * 2 * static_cast<std::uint64_t>(cfg.hidden);
}

}  // namespace webformer
