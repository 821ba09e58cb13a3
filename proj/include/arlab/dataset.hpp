#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "arlab/token_core.hpp"

namespace arlab {

/// One (x, z) pair: prompt ids and the continuation that follows them.
struct CoTSample {
  std::vector<TokenId> x;
  std::vector<TokenId> z;

  friend bool operator==(const CoTSample&, const CoTSample&) = default;
};

/// A corpus of CoT samples over one vocabulary with a fixed prompt length.
///
/// `meta` records the generator name, its parameters and the seed; running
/// the named generator with those values reproduces the samples bit-exactly.
/// Generated corpora terminate every z with EOS; corpora emitted by a compiled
/// circuit simulator hold raw gate traces and have `eos_terminated == false`.
struct CoTDataset {
  Vocabulary vocab;
  std::vector<CoTSample> samples;
  nlohmann::json meta = nlohmann::json::object();
  std::size_t prompt_len = 0;
  bool eos_terminated = true;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Longest x + z.
  std::size_t max_len() const;

  /// Throws FormatError if any invariant is broken.
  void validate() const;

  friend bool operator==(const CoTDataset&, const CoTDataset&) = default;
};

/// Line 1 is a header {"format","version","vocab","prompt_len","eos_terminated","meta"};
/// every further line is {"x":[ids],"z":[ids]}.
void write_jsonl(const CoTDataset& dataset, const std::string& path);
/// Throws IOError if the file cannot be opened and FormatError (with the
/// 1-based line number) on any malformed or inconsistent line.
CoTDataset read_jsonl(const std::string& path);

}  // namespace arlab
