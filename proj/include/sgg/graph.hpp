#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgg/errors.hpp"
#include "sgg/geometry.hpp"

namespace sgg {

struct Proposal {
  Box box;
  double objectness;

  Proposal(Box b, double score) : box(b), objectness(score) {
    if (!(score >= 0.0 && score <= 1.0))
      throw GeometryError("objectness " + std::to_string(score) +
                          " outside [0,1]");
  }
};

// One directed candidate relation (subject, object) with its union box and
// the product-of-objectness confidence used for clustering.
struct RelationCandidate {
  int subject;
  int object;
  Box union_box;
  double confidence;
};

struct Triple {
  int subject;
  int subgraph;
  int object;
};

// Factorized form of the fully-connected relation graph: every directed pair
// keeps its triple, but union-box representations are shared via subgraphs.
struct ConnectionGraph {
  std::vector<Proposal> objects;
  std::vector<Box> subgraphs;
  std::vector<Triple> triples;                  // all N(N-1), (i,j) lexicographic
  std::vector<std::vector<int>> subgraphs_of;   // per object, sorted
  std::vector<std::vector<int>> objects_of;     // per subgraph, sorted

  int n_objects() const { return static_cast<int>(objects.size()); }
  int n_subgraphs() const { return static_cast<int>(subgraphs.size()); }
  int n_triples() const { return static_cast<int>(triples.size()); }

  // Index of the directed triple (i, j) in the lexicographic layout.
  int triple_index(int i, int j) const {
    const int n = n_objects();
    if (i < 0 || j < 0 || i >= n || j >= n || i == j)
      throw GraphError("no triple for pair (" + std::to_string(i) + "," +
                       std::to_string(j) + ")");
    return i * (n - 1) + (j < i ? j : j - 1);
  }
};

// Every ordered pair (i, j), i != j, in lexicographic order. Confidence is the
// product of the two objectness scores; ties later resolve by this ordering.
inline std::vector<RelationCandidate> build_full_graph(
    const std::vector<Proposal>& proposals) {
  if (proposals.empty()) throw GraphError("build_full_graph: no proposals");
  const int n = static_cast<int>(proposals.size());
  std::vector<RelationCandidate> out;
  out.reserve(static_cast<std::size_t>(n) * (n - 1));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      out.push_back({i, j, union_box(proposals[i].box, proposals[j].box),
                     proposals[i].objectness * proposals[j].objectness});
    }
  return out;
}

// Clusters candidate union boxes with NMS; kept boxes become subgraphs. The
// symmetric twins (i,j) / (j,i) share one union box, so NMS runs over the
// distinct unordered unions and fans back out to directed triples. No relation
// is dropped: all N(N-1) triples survive with a subgraph assignment.
inline ConnectionGraph factorize(const std::vector<Proposal>& proposals,
                                 const std::vector<RelationCandidate>& candidates,
                                 double threshold) {
  const int n = static_cast<int>(proposals.size());
  if (static_cast<int>(candidates.size()) != n * (n - 1))
    throw GraphError("factorize: candidate list incomplete: " +
                     std::to_string(candidates.size()) + " for N=" +
                     std::to_string(n));

  ConnectionGraph g;
  g.objects = proposals;
  g.subgraphs_of.resize(n);

  if (n == 1) return g;

  // Unordered pair reps in (i<j) lexicographic order.
  std::vector<ScoredBox> reps;
  std::vector<std::pair<int, int>> rep_pair;
  reps.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (const auto& c : candidates) {
    if (c.subject < c.object) {
      reps.emplace_back(c.union_box, c.confidence);
      rep_pair.emplace_back(c.subject, c.object);
    }
  }

  NmsResult res = nms(reps, threshold);

  // Kept rep -> dense subgraph index, in sweep order.
  std::vector<int> subgraph_of_rep(reps.size(), -1);
  for (std::size_t s = 0; s < res.kept.size(); ++s) {
    subgraph_of_rep[res.kept[s]] = static_cast<int>(s);
    g.subgraphs.push_back(reps[res.kept[s]].box);
  }
  g.objects_of.resize(g.subgraphs.size());

  auto rep_index = [n](int i, int j) {
    if (i > j) std::swap(i, j);
    // Position of (i, j), i<j, in the lexicographic unordered enumeration.
    return i * n - i * (i + 1) / 2 + (j - i - 1);
  };

  g.triples.reserve(candidates.size());
  for (const auto& c : candidates) {
    int rep = rep_index(c.subject, c.object);
    int k = subgraph_of_rep[res.assign[rep]];
    g.triples.push_back({c.subject, k, c.object});
  }

  for (const auto& t : g.triples) {
    g.subgraphs_of[t.subject].push_back(t.subgraph);
    g.subgraphs_of[t.object].push_back(t.subgraph);
    g.objects_of[t.subgraph].push_back(t.subject);
    g.objects_of[t.subgraph].push_back(t.object);
  }
  auto dedup = [](std::vector<int>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  for (auto& v : g.subgraphs_of) dedup(v);
  for (auto& v : g.objects_of) dedup(v);
  return g;
}

inline ConnectionGraph factorize(const std::vector<Proposal>& proposals,
                                 double threshold) {
  return factorize(proposals, build_full_graph(proposals), threshold);
}

// Degenerate per-pair graph: one subgraph per directed candidate relation.
// This is the quadratic baseline the factorized representation replaces.
inline ConnectionGraph per_pair_graph(const std::vector<Proposal>& proposals) {
  const auto candidates = build_full_graph(proposals);
  ConnectionGraph g;
  g.objects = proposals;
  g.subgraphs_of.resize(proposals.size());
  g.subgraphs.reserve(candidates.size());
  g.triples.reserve(candidates.size());
  for (const auto& c : candidates) {
    int k = static_cast<int>(g.subgraphs.size());
    g.subgraphs.push_back(c.union_box);
    g.triples.push_back({c.subject, k, c.object});
    g.objects_of.push_back({std::min(c.subject, c.object),
                            std::max(c.subject, c.object)});
    g.subgraphs_of[c.subject].push_back(k);
    g.subgraphs_of[c.object].push_back(k);
  }
  return g;
}

struct GraphStats {
  int n_objects = 0;
  int n_subgraphs = 0;
  int n_triples = 0;
  double reduction_ratio = 0.0;  // subgraphs / triples
  double mean_subgraphs_per_object = 0.0;
  double mean_objects_per_subgraph = 0.0;
};

inline GraphStats graph_stats(const ConnectionGraph& g) {
  GraphStats s;
  s.n_objects = g.n_objects();
  s.n_subgraphs = g.n_subgraphs();
  s.n_triples = g.n_triples();
  if (s.n_triples > 0)
    s.reduction_ratio = static_cast<double>(s.n_subgraphs) / s.n_triples;
  if (s.n_objects > 0) {
    double acc = 0;
    for (const auto& v : g.subgraphs_of) acc += static_cast<double>(v.size());
    s.mean_subgraphs_per_object = acc / s.n_objects;
  }
  if (s.n_subgraphs > 0) {
    double acc = 0;
    for (const auto& v : g.objects_of) acc += static_cast<double>(v.size());
    s.mean_objects_per_subgraph = acc / s.n_subgraphs;
  }
  return s;
}

inline nlohmann::json stats_to_json(const GraphStats& s) {
  return nlohmann::json{{"n_objects", s.n_objects},
                        {"n_subgraphs", s.n_subgraphs},
                        {"n_triples", s.n_triples},
                        {"reduction_ratio", s.reduction_ratio},
                        {"mean_subgraphs_per_object", s.mean_subgraphs_per_object},
                        {"mean_objects_per_subgraph", s.mean_objects_per_subgraph}};
}

inline nlohmann::json graph_to_json(const ConnectionGraph& g) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& p : g.objects)
    objects.push_back({{"box", {p.box.x1, p.box.y1, p.box.x2, p.box.y2}},
                       {"score", p.objectness}});
  nlohmann::json subgraphs = nlohmann::json::array();
  for (const auto& b : g.subgraphs)
    subgraphs.push_back({b.x1, b.y1, b.x2, b.y2});
  nlohmann::json triples = nlohmann::json::array();
  for (const auto& t : g.triples)
    triples.push_back({t.subject, t.subgraph, t.object});
  return nlohmann::json{
      {"objects", objects}, {"subgraphs", subgraphs}, {"triples", triples}};
}

}  // namespace sgg
