#include "dgseg/split.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dgseg/rng.hpp"

namespace dgseg {

using nlohmann::json;

std::string to_string(Assignment a) {
  switch (a) {
    case Assignment::train: return "train";
    case Assignment::val: return "val";
    case Assignment::source_test: return "source_test";
    default: return "target_test";
  }
}

Assignment assignment_from_string(const std::string& s) {
  if (s == "train") return Assignment::train;
  if (s == "val") return Assignment::val;
  if (s == "source_test") return Assignment::source_test;
  if (s == "target_test") return Assignment::target_test;
  throw std::invalid_argument("unknown assignment: " + s);
}

std::vector<std::string> SplitManifest::ids(Assignment a) const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (e.assignment == a) out.push_back(e.case_id);
  return out;
}

std::vector<std::string> SplitManifest::target_ids() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (e.tag.role != DomainRole::source) out.push_back(e.case_id);
  return out;
}

const SplitEntry* SplitManifest::find(const std::string& case_id) const {
  for (const auto& e : entries)
    if (e.case_id == case_id) return &e;
  return nullptr;
}

std::size_t SplitManifest::count(Assignment a) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += (e.assignment == a);
  return n;
}

SplitManifest split_source(const std::vector<std::pair<std::string, DomainTag>>& cases,
                           std::uint64_t seed) {
  std::vector<std::pair<std::string, DomainTag>> source, target;
  for (const auto& c : cases) {
    if (!c.second.consistent())
      throw std::invalid_argument("inconsistent domain tag for case " + c.first);
    (c.second.role == DomainRole::source ? source : target).push_back(c);
  }
  if (source.empty()) throw std::invalid_argument("split_source: no source cases");
  if (source.size() < 5)
    throw std::invalid_argument("split_source: need at least 5 source cases, got " +
                                std::to_string(source.size()));

  // Shuffle keyed on sorted ids so the result is independent of input order.
  std::sort(source.begin(), source.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  Rng rng(derive_seed(seed, hash_string("split_source")));
  rng.shuffle(source);

  const std::size_t n = source.size();
  const std::size_t n_val = n / 5;
  const std::size_t n_test = n / 5;

  SplitManifest m;
  m.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    Assignment a = Assignment::train;
    if (i < n_val)
      a = Assignment::val;
    else if (i < n_val + n_test)
      a = Assignment::source_test;
    m.entries.push_back({source[i].first, source[i].second, a});
  }
  for (const auto& t : target)
    m.entries.push_back({t.first, t.second, Assignment::target_test});

  std::sort(m.entries.begin(), m.entries.end(),
            [](const SplitEntry& a, const SplitEntry& b) { return a.case_id < b.case_id; });
  return m;
}

SplitManifest subsample_train(const SplitManifest& m, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("subsample_train: fraction must be in (0,1]");

  std::vector<std::string> train = m.ids(Assignment::train);
  std::sort(train.begin(), train.end());
  if (double(train.size()) * fraction < 1.0)
    throw std::invalid_argument("subsample_train: fraction keeps no train case");

  // Permute once per seed, keep a prefix: prefixes nest across fractions.
  Rng rng(derive_seed(seed, hash_string("subsample_train")));
  rng.shuffle(train);
  const std::size_t keep = std::size_t(std::ceil(fraction * double(train.size())));
  std::set<std::string> kept(train.begin(), train.begin() + std::min(keep, train.size()));

  SplitManifest out;
  out.seed = m.seed;
  for (const auto& e : m.entries) {
    if (e.assignment == Assignment::train && !kept.count(e.case_id)) continue;
    out.entries.push_back(e);
  }
  return out;
}

IsolationReport verify_isolation(const SplitManifest& m) {
  IsolationReport r;
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (!seen.insert(e.case_id).second) {
      r.pass = false;
      r.violations.push_back("duplicate case_id: " + e.case_id);
    }
    const bool is_target = e.tag.role != DomainRole::source;
    if (is_target && (e.assignment == Assignment::train || e.assignment == Assignment::val)) {
      r.pass = false;
      r.violations.push_back("target-domain case in " + to_string(e.assignment) + ": " +
                             e.case_id);
    }
    if (!is_target && e.assignment == Assignment::target_test) {
      r.pass = false;
      r.violations.push_back("source case assigned target_test: " + e.case_id);
    }
  }
  return r;
}

namespace {

json manifest_to_json(const SplitManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"case_id", e.case_id},
                       {"center", e.tag.center},
                       {"phase", to_string(e.tag.phase)},
                       {"domain_role", to_string(e.tag.role)},
                       {"assignment", to_string(e.assignment)}});
  }
  return json{{"seed", m.seed}, {"ratio", {3, 1, 1}}, {"entries", entries}};
}

}  // namespace

void save_manifest(const SplitManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  f << manifest_to_json(m).dump(2) << "\n";
}

SplitManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  json j = json::parse(f);
  SplitManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& e : j.at("entries")) {
    SplitEntry entry;
    entry.case_id = e.at("case_id").get<std::string>();
    entry.tag.center = e.at("center").get<std::string>();
    entry.tag.phase = phase_from_string(e.at("phase").get<std::string>());
    entry.tag.role = role_from_string(e.at("domain_role").get<std::string>());
    entry.assignment = assignment_from_string(e.at("assignment").get<std::string>());
    m.entries.push_back(entry);
  }
  return m;
}

std::uint64_t manifest_hash(const SplitManifest& m) {
  return hash_string(manifest_to_json(m).dump());
}

}  // namespace dgseg
