#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgseg/volume.hpp"

namespace dgseg {

enum class Assignment { train, val, source_test, target_test };

std::string to_string(Assignment a);
Assignment assignment_from_string(const std::string& s);

struct SplitEntry {
  std::string case_id;
  DomainTag tag;
  Assignment assignment = Assignment::train;
};

// Leakage-free split of a corpus: target-domain cases never enter train/val,
// source cases follow the 3:1:1 ratio deterministically per seed.
struct SplitManifest {
  std::vector<SplitEntry> entries;  // sorted by case_id
  std::uint64_t seed = 0;

  std::vector<std::string> ids(Assignment a) const;
  std::vector<std::string> target_ids() const;
  const SplitEntry* find(const std::string& case_id) const;
  std::size_t count(Assignment a) const;
};

// Source cases are shuffled keyed on (sorted ids, seed) and assigned
// val = floor(N/5), source_test = floor(N/5), train = remainder. Every
// target-role case goes to target_test regardless of seed. Requires >= 5
// source cases.
SplitManifest split_source(const std::vector<std::pair<std::string, DomainTag>>& cases,
                           std::uint64_t seed);

// Keeps ceil(fraction * |train|) train cases; non-selected train cases are
// dropped from the manifest. Nested: for a fixed seed, a smaller fraction's
// train set is a subset of a larger fraction's.
SplitManifest subsample_train(const SplitManifest& m, double fraction, std::uint64_t seed);

struct IsolationReport {
  bool pass = true;
  std::vector<std::string> violations;
};

// Reports (never throws): target-role cases found in train/val, duplicate ids.
IsolationReport verify_isolation(const SplitManifest& m);

void save_manifest(const SplitManifest& m, const std::string& path);
SplitManifest load_manifest(const std::string& path);

// FNV-1a of the canonical serialized form; used as a provenance fingerprint.
std::uint64_t manifest_hash(const SplitManifest& m);

}  // namespace dgseg
