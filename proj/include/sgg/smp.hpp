#pragma once

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgg/errors.hpp"
#include "sgg/graph.hpp"
#include "sgg/tensor.hpp"

namespace sgg {

// 2-D average pooling of a subgraph map to a feature vector.
inline Tensor pool_subgraph(const Tensor& subgraph_map) {
  return spatial_mean(subgraph_map);
}

// Attention weights recorded by one message-passing step, for debugging and
// for the normalization checks. object_attention[i] follows the order of
// subgraphs_of[i]; subgraph_attention[k][m] is the row-major 5x5 (H*W) weight
// map of the m-th entry of objects_of[k].
struct AttentionRecord {
  std::vector<std::vector<real>> object_attention;
  std::vector<std::vector<std::vector<real>>> subgraph_attention;
};

inline nlohmann::json attention_to_json(const AttentionRecord& rec,
                                        const ConnectionGraph& g) {
  nlohmann::json objects = nlohmann::json::array();
  for (std::size_t i = 0; i < rec.object_attention.size(); ++i)
    objects.push_back({{"object", i},
                       {"subgraphs", g.subgraphs_of[i]},
                       {"weights", rec.object_attention[i]}});
  nlohmann::json subgraphs = nlohmann::json::array();
  for (std::size_t k = 0; k < rec.subgraph_attention.size(); ++k) {
    nlohmann::json maps = nlohmann::json::array();
    for (const auto& m : rec.subgraph_attention[k]) maps.push_back(m);
    subgraphs.push_back(
        {{"subgraph", k}, {"objects", g.objects_of[k]}, {"maps", maps}});
  }
  return nlohmann::json{{"objects", objects}, {"subgraphs", subgraphs}};
}

// One spatial-weighted message-passing layer. Both directions read the
// pre-step states and the refinements are residual, so zero message weights
// make the step an exact identity.
class SmpLayer {
 public:
  SmpLayer(int dim, int layer_index, std::mt19937_64& rng) : dim_(dim) {
    const std::string prefix = "smp" + std::to_string(layer_index) + ".";
    att_s_w_ = Parameter(prefix + "att_s.w", uniform_init({dim, dim}, dim, rng));
    att_s_b_ = Parameter(prefix + "att_s.b", Tensor::zeros({dim}, true));
    s2o_w_ = Parameter(prefix + "s2o.w", uniform_init({dim, dim}, dim, rng));
    s2o_b_ = Parameter(prefix + "s2o.b", Tensor::zeros({dim}, true));
    att_o_w_ = Parameter(prefix + "att_o.w", uniform_init({dim, dim}, dim, rng));
    att_o_b_ = Parameter(prefix + "att_o.b", Tensor::zeros({dim}, true));
    o2s_k_ = Parameter(prefix + "o2s.w", uniform_init({dim, dim, 1, 1}, dim, rng));
    o2s_b_ = Parameter(prefix + "o2s.b", Tensor::zeros({dim}, true));
  }

  int dim() const { return dim_; }

  // Attention-aggregated subgraph-to-object message. `pooled` and
  // `transformed` are the per-subgraph s_k and FC_att_s(ReLU(s_k)) for the
  // subgraphs connected to this object, in subgraphs_of order.
  Tensor refine_object(const Tensor& object_vec,
                       const std::vector<Tensor>& pooled,
                       const std::vector<Tensor>& transformed,
                       std::vector<real>* attention = nullptr) const {
    if (pooled.empty())
      throw GraphError("smp: object with no connected subgraphs");
    std::vector<Tensor> logits;
    logits.reserve(transformed.size());
    for (const auto& t : transformed) logits.push_back(dot(object_vec, t));
    Tensor weights = softmax(concat0(logits));
    if (attention) *attention = weights.vals();
    Tensor merged = weighted_sum(weights, pooled);
    return add(object_vec, linear(relu(merged), s2o_w_.tensor, s2o_b_.tensor));
  }

  Tensor message_s2o(const Tensor& object_vec,
                     const std::vector<Tensor>& subgraph_maps,
                     std::vector<real>* attention = nullptr) const {
    if (subgraph_maps.empty())
      throw GraphError("smp: object with no connected subgraphs");
    std::vector<Tensor> pooled, transformed;
    for (const auto& m : subgraph_maps) {
      pooled.push_back(pool_subgraph(m));
      transformed.push_back(transform_pooled(pooled.back()));
    }
    return refine_object(object_vec, pooled, transformed, attention);
  }

  // Location-wise attention over member objects; `queries` are
  // FC_att_o(ReLU(o_i)) in objects_of order. Weights sum to one across the
  // objects at every location, with no constraint along the spatial axes.
  Tensor refine_subgraph(const Tensor& subgraph_map,
                         const std::vector<Tensor>& member_objects,
                         const std::vector<Tensor>& queries,
                         std::vector<std::vector<real>>* attention = nullptr) const {
    if (member_objects.empty())
      throw GraphError("smp: subgraph with no member objects");
    std::vector<Tensor> logit_maps;
    logit_maps.reserve(queries.size());
    for (const auto& q : queries)
      logit_maps.push_back(channel_dot(subgraph_map, q));
    Tensor weight_maps = softmax0(stack0(logit_maps));
    if (attention) {
      const int n = static_cast<int>(member_objects.size());
      const int hw = weight_maps.size() / n;
      attention->assign(n, std::vector<real>(hw));
      for (int m = 0; m < n; ++m)
        std::copy(weight_maps.vals().begin() + m * hw,
                  weight_maps.vals().begin() + (m + 1) * hw,
                  (*attention)[m].begin());
    }
    Tensor merged = mix_maps(weight_maps, member_objects);
    return add(subgraph_map, conv2d(relu(merged), o2s_k_.tensor, o2s_b_.tensor, 0));
  }

  Tensor message_o2s(const Tensor& subgraph_map,
                     const std::vector<Tensor>& member_objects,
                     std::vector<std::vector<real>>* attention = nullptr) const {
    if (member_objects.empty())
      throw GraphError("smp: subgraph with no member objects");
    std::vector<Tensor> queries;
    for (const auto& o : member_objects) queries.push_back(transform_object(o));
    return refine_subgraph(subgraph_map, member_objects, queries, attention);
  }

  // One parallel step: both directions read the pre-step states, then both
  // updates commit at once.
  void step(std::vector<Tensor>& objects, std::vector<Tensor>& subgraphs,
            const ConnectionGraph& g, AttentionRecord* record = nullptr) const {
    if (static_cast<int>(objects.size()) != g.n_objects() ||
        static_cast<int>(subgraphs.size()) != g.n_subgraphs())
      throw GraphError("smp: state lists do not match the graph");
    if (record) {
      record->object_attention.resize(objects.size());
      record->subgraph_attention.resize(subgraphs.size());
    }

    // Shared per-subgraph and per-object transforms, computed once.
    std::vector<Tensor> pooled, transformed;
    pooled.reserve(subgraphs.size());
    transformed.reserve(subgraphs.size());
    for (const auto& s : subgraphs) {
      pooled.push_back(pool_subgraph(s));
      transformed.push_back(transform_pooled(pooled.back()));
    }
    std::vector<Tensor> queries;
    queries.reserve(objects.size());
    for (const auto& o : objects) queries.push_back(transform_object(o));

    std::vector<Tensor> new_objects(objects.size());
    for (int i = 0; i < g.n_objects(); ++i) {
      std::vector<Tensor> p, t;
      for (int k : g.subgraphs_of[i]) {
        p.push_back(pooled[k]);
        t.push_back(transformed[k]);
      }
      new_objects[i] = refine_object(
          objects[i], p, t, record ? &record->object_attention[i] : nullptr);
    }

    std::vector<Tensor> new_subgraphs(subgraphs.size());
    for (int k = 0; k < g.n_subgraphs(); ++k) {
      std::vector<Tensor> members, q;
      for (int i : g.objects_of[k]) {
        members.push_back(objects[i]);
        q.push_back(queries[i]);
      }
      new_subgraphs[k] = refine_subgraph(
          subgraphs[k], members, q,
          record ? &record->subgraph_attention[k] : nullptr);
    }

    objects = std::move(new_objects);
    subgraphs = std::move(new_subgraphs);
  }

  std::vector<Parameter*> params() {
    return {&att_s_w_, &att_s_b_, &s2o_w_, &s2o_b_,
            &att_o_w_, &att_o_b_, &o2s_k_, &o2s_b_};
  }

  // Test hook: zero message transforms make the step an identity.
  void zero_message_transforms() {
    for (Parameter* p : {&s2o_w_, &s2o_b_, &o2s_k_, &o2s_b_}) {
      auto& v = p->tensor.leaf_vals();
      std::fill(v.begin(), v.end(), real(0));
    }
  }

 private:
  Tensor transform_pooled(const Tensor& pooled_vec) const {
    return linear(relu(pooled_vec), att_s_w_.tensor, att_s_b_.tensor);
  }
  Tensor transform_object(const Tensor& object_vec) const {
    return linear(relu(object_vec), att_o_w_.tensor, att_o_b_.tensor);
  }

  int dim_;
  Parameter att_s_w_, att_s_b_, s2o_w_, s2o_b_;
  Parameter att_o_w_, att_o_b_, o2s_k_, o2s_b_;
};

}  // namespace sgg
