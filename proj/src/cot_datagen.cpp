#include "arlab/cot_datagen.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <sstream>

#include "arlab/circuit_compiler.hpp"
#include "arlab/error.hpp"
#include "arlab/rng.hpp"

namespace arlab {

std::string to_string(ParityCot cot) {
  switch (cot) {
    case ParityCot::kTree: return "tree";
    case ParityCot::kLog: return "log";
    case ParityCot::kNone: return "none";
  }
  return "tree";
}

ParityCot parse_parity_cot(std::string_view s) {
  if (s == "tree") return ParityCot::kTree;
  if (s == "log") return ParityCot::kLog;
  if (s == "none") return ParityCot::kNone;
  throw SpecError("unknown parity trace mode '" + std::string(s) + "' (tree, log, none)");
}

CoTDataset gen_parity_dataset(const ParityDatasetParams& params) {
  if (params.count == 0) throw EmptyRequest("parity dataset needs count >= 1");
  if (params.k < 2) throw SpecError("k must be at least 2");
  if (params.n == 0) throw SpecError("n must be at least 1");
  if (params.enumerate && (params.n >= 63 || params.count > (std::uint64_t{1} << params.n))) {
    throw SpecError("enumerated dataset larger than 2^n");
  }

  Rng rng(params.seed);
  ParitySpec spec;
  if (params.subset_mode == SubsetMode::kFixed) {
    spec = ParitySpec::make(params.n, params.subset);
  } else {
    std::vector<std::size_t> a;
    while (a.empty()) {
      for (std::size_t i = 0; i < params.n; ++i) {
        if (rng.coin()) a.push_back(i);
      }
    }
    spec = ParitySpec::make(params.n, std::move(a));
  }

  std::optional<ParityTreeProgram> tree;
  std::optional<ThresholdCircuit> circuit;
  if (params.cot == ParityCot::kTree) tree = parity_tree_program(spec, params.k);
  if (params.cot == ParityCot::kLog) circuit = parity_threshold_circuit(spec);

  CoTDataset ds;
  ds.vocab = Vocabulary::boolean();
  ds.prompt_len = params.n;
  ds.meta = {{"generator", "parity"},
             {"n", params.n},
             {"k", params.k},
             {"subset_mode", params.subset_mode == SubsetMode::kFixed ? "fixed" : "random"},
             {"subset", spec.subset},
             {"cot", to_string(params.cot)},
             {"count", params.count},
             {"seed", params.seed},
             {"enumerate", params.enumerate}};
  const TokenId eos = ds.vocab.eos_id();
  ds.samples.reserve(params.count);
  BitVec x(params.n);
  for (std::size_t s = 0; s < params.count; ++s) {
    if (params.enumerate) {
      x = bits_of(s, params.n);
    } else {
      for (auto& b : x) b = rng.coin() ? 1 : 0;
    }
    BitVec trace;
    switch (params.cot) {
      case ParityCot::kTree: trace = run_tree_program(*tree, x); break;
      case ParityCot::kLog: trace = eval_circuit(*circuit, x).trace; break;
      case ParityCot::kNone: trace = {parity_eval(spec, x)}; break;
    }
    CoTSample sample;
    sample.x.assign(x.begin(), x.end());
    sample.z.assign(trace.begin(), trace.end());
    sample.z.push_back(eos);
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

ParitySpec parity_spec_of(const CoTDataset& dataset) {
  try {
    return ParitySpec::make(dataset.meta.at("n").get<std::size_t>(),
                            dataset.meta.at("subset").get<std::vector<std::size_t>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset meta lacks a parity subset: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kSigns[] = {"×", "+", "=", "(", ")"};

std::string pair_surface(int a, int b) {
  return std::to_string(a) + std::string(kTimes) + std::to_string(b);
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

Vocabulary build_mult_vocabulary() {
  std::vector<std::string> tokens;
  for (int d = 0; d < 10; ++d) tokens.push_back(std::to_string(d));
  for (const char* s : kSigns) tokens.emplace_back(s);
  for (int a = 0; a < 10; ++a) {
    for (int b = 0; b < 10; ++b) tokens.push_back(pair_surface(a, b));
  }
  tokens.emplace_back("<pad>");
  tokens.emplace_back("<eos>");
  return Vocabulary::build(std::move(tokens), "<pad>", "<eos>");
}

TokenSeq tokenize_mult(const Vocabulary& vocab, std::string_view s) {
  TokenSeq out;
  const std::size_t tl = kTimes.size();
  std::size_t i = 0;
  while (i < s.size()) {
    // Pair token: digit, ×, digit, with both digits standing alone.
    if (i + tl + 2 <= s.size() && is_digit(s[i]) && s.substr(i + 1, tl) == kTimes && is_digit(s[i + 1 + tl])) {
      const bool free_left = i == 0 || (!is_digit(s[i - 1]) && !(i >= tl && s.substr(i - tl, tl) == kTimes));
      const std::size_t after = i + 2 + tl;
      const bool free_right = after >= s.size() || !is_digit(s[after]);
      if (free_left && free_right) {
        if (auto id = vocab.find(s.substr(i, tl + 2))) {
          out.ids.push_back(*id);
          i = after;
          continue;
        }
      }
    }
    // Longest single surface starting at i.
    std::optional<TokenId> best;
    std::size_t best_len = 0;
    for (std::size_t len = std::min<std::size_t>(tl, s.size() - i); len >= 1; --len) {
      if (auto id = vocab.find(s.substr(i, len))) {
        best = id;
        best_len = len;
        break;
      }
    }
    if (!best) {
      throw TokenizeError("no token matches at byte " + std::to_string(i) + " of \"" + std::string(s) + "\"");
    }
    out.ids.push_back(*best);
    i += best_len;
  }
  return out;
}

std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    if (!vocab.valid(id)) throw InvalidToken("token id " + std::to_string(id) + " outside vocabulary");
    out += vocab.surface(id);
  }
  return out;
}

std::string gen_mult_cot(std::int64_t a, std::int64_t b, int digits) {
  if (digits < 1 || digits > 9) throw RangeError("digit count must be in 1..9");
  std::int64_t limit = 1;
  for (int i = 0; i < digits; ++i) limit *= 10;
  if (a < 0 || b < 0 || a >= limit || b >= limit) {
    throw RangeError("operands must lie in [0, 10^" + std::to_string(digits) + ")");
  }
  const std::string times(kTimes);
  auto padded = [](std::int64_t v, int width) {
    std::string s = std::to_string(v);
    return std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(s.size(), width), '0') + s;
  };
  auto digits_lsf = [&](std::int64_t v) {
    std::vector<int> out;
    for (int i = 0; i < digits; ++i, v /= 10) out.push_back(static_cast<int>(v % 10));
    return out;
  };
  auto power = [](int e) { return "1" + std::string(static_cast<std::size_t>(e), '0'); };

  const auto da = digits_lsf(a);
  const auto db = digits_lsf(b);
  std::ostringstream out;
  out << padded(a, digits) << times << padded(b, digits) << '=';

  auto expansion = [&](const std::vector<int>& d) {
    out << '(';
    for (int i = 0; i < digits; ++i) out << (i ? "+" : "") << d[i] << times << power(i);
    out << ')';
  };
  expansion(da);
  out << times;
  expansion(db);
  out << '=';

  bool first = true;
  for (int i = 0; i < digits; ++i) {
    for (int j = 0; j < digits; ++j) {
      out << (first ? "" : "+") << da[i] << times << db[j] << times << power(i) << times << power(j);
      first = false;
    }
  }
  out << '=';

  first = true;
  for (int i = 0; i < digits; ++i) {
    for (int j = 0; j < digits; ++j) {
      out << (first ? "" : "+") << padded(da[i] * db[j], 2) << std::string(static_cast<std::size_t>(i + j), '0');
      first = false;
    }
  }
  out << '=' << padded(a * b, 2 * digits);
  return out.str();
}

MultSplit gen_mult_dataset(int digits, double train_fraction, std::uint64_t seed, std::size_t max_pairs) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw RangeError("train fraction must lie in (0, 1)");
  if (digits < 1 || digits > 9) throw RangeError("digit count must be in 1..9");
  if (max_pairs == 0) throw EmptyRequest("max_pairs must be positive");
  std::int64_t limit = 1;
  for (int i = 0; i < digits; ++i) limit *= 10;

  Rng rng(seed);
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  const bool exhaustive = digits <= 4 && static_cast<std::uint64_t>(limit * limit) <= max_pairs;
  if (exhaustive) {
    for (std::int64_t a = 0; a < limit; ++a) {
      for (std::int64_t b = 0; b < limit; ++b) pairs.emplace_back(a, b);
    }
  } else {
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    while (pairs.size() < max_pairs) {
      std::pair<std::int64_t, std::int64_t> p{rng.between(0, limit - 1), rng.between(0, limit - 1)};
      if (seen.insert(p).second) pairs.push_back(p);
    }
  }
  rng.shuffle(std::span(pairs));
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(pairs.size())));

  const Vocabulary vocab = build_mult_vocabulary();
  const TokenId eq = vocab.id("=");
  nlohmann::json meta = {{"generator", "mult"},
                         {"digits", digits},
                         {"train_fraction", train_fraction},
                         {"seed", seed},
                         {"max_pairs", max_pairs},
                         {"exhaustive", exhaustive},
                         {"pairs", pairs.size()}};
  MultSplit split;
  for (CoTDataset* ds : {&split.train, &split.val}) {
    ds->vocab = vocab;
    ds->meta = meta;
    ds->meta["split"] = ds == &split.train ? "train" : "val";
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const TokenSeq seq = tokenize_mult(vocab, gen_mult_cot(pairs[i].first, pairs[i].second, digits));
    const auto cut = std::find(seq.ids.begin(), seq.ids.end(), eq) + 1;
    CoTSample s;
    s.x.assign(seq.ids.begin(), cut);
    s.z.assign(cut, seq.ids.end());
    s.z.push_back(vocab.eos_id());
    CoTDataset& ds = i < n_train ? split.train : split.val;
    ds.prompt_len = s.x.size();
    ds.samples.push_back(std::move(s));
  }
  return split;
}

std::vector<TokenId> extract_mult_answer(const Vocabulary& vocab, std::span<const TokenId> z) {
  const TokenId eq = vocab.id("=");
  auto end = std::find(z.begin(), z.end(), vocab.eos_id());
  auto last_eq = std::find(std::make_reverse_iterator(end), z.rend(), eq);
  if (last_eq == z.rend()) return {};
  return {last_eq.base(), end};
}

}  // namespace arlab
