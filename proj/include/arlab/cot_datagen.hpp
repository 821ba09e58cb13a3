#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <span>
#include <vector>

#include "arlab/dataset.hpp"
#include "arlab/parity_lab.hpp"
#include "arlab/token_core.hpp"

namespace arlab {

// ---------------------------------------------------------------------------
// Parity corpora

enum class SubsetMode { kFixed, kRandom };

/// Which intermediate tokens precede the answer.
enum class ParityCot {
  kTree,  // k-ary parity-tree trace
  kLog,   // most-significant-first sum bits of the threshold construction
  kNone,  // answer only
};

struct ParityDatasetParams {
  std::size_t n = 4;
  std::size_t k = 2;
  SubsetMode subset_mode = SubsetMode::kFixed;
  std::vector<std::size_t> subset;  // 0-based, used in kFixed mode
  ParityCot cot = ParityCot::kTree;
  std::size_t count = 1;
  std::uint64_t seed = 0;
  /// Take x = 0, 1, 2, ... in index order instead of sampling (count <= 2^n).
  bool enumerate = false;
};

/// x uniform in {0,1}^n; z = trace + EOS where the last trace token is chi_A(x).
/// In kRandom mode A is drawn once from the seed (non-empty) and recorded in
/// the meta. Throws EmptyRequest for count == 0 and SpecError for k < 2.
CoTDataset gen_parity_dataset(const ParityDatasetParams& params);

/// Subset actually used by a parity dataset (read back from its meta).
ParitySpec parity_spec_of(const CoTDataset& dataset);

std::string to_string(ParityCot cot);
ParityCot parse_parity_cot(std::string_view s);

// ---------------------------------------------------------------------------
// Multiplication corpora

inline constexpr std::string_view kTimes = "×";  // the multiplication sign

/// Digits 0-9, the signs x + = ( ), the 100 pair tokens "a×b", <pad>, <eos>: 117 tokens.
Vocabulary build_mult_vocabulary();

/// Greedy longest match, left to right. A pair token "a×b" is only taken when
/// both digits stand alone as operands: a is not preceded by a digit or "×"
/// and b is not followed by a digit. Throws TokenizeError on characters
/// outside the vocabulary.
TokenSeq tokenize_mult(const Vocabulary& vocab, std::string_view s);
std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> ids);

/// Unfolded long multiplication, five '='-joined segments:
///   a×b (zero-padded to D digits)
///   (a0×1+a1×10+...)×(b0×1+...)        least significant digit first
///   ai×bj×10^i×10^j for i outer, j inner, joined by '+'
///   partial products: two-digit ai*bj then i+j zeros, joined by '+'
///   a*b zero-padded to 2D digits
/// Throws RangeError unless 0 <= a, b < 10^D and 1 <= D <= 9.
std::string gen_mult_cot(std::int64_t a, std::int64_t b, int digits);

struct MultSplit {
  CoTDataset train;
  CoTDataset val;
};

/// Every operand pair (or `max_pairs` seeded-sampled distinct pairs when
/// 10^(2D) exceeds it), shuffled and split so the first round(fraction * N)
/// go to training. Prompt = tokens through the first '='; z = rest + EOS.
MultSplit gen_mult_dataset(int digits, double train_fraction, std::uint64_t seed, std::size_t max_pairs = 100000);

/// Tokens after the last "=" and before EOS (or the end).
std::vector<TokenId> extract_mult_answer(const Vocabulary& vocab, std::span<const TokenId> z);

}  // namespace arlab
