#include "arlab/token_core.hpp"

#include <cmath>

#include "arlab/error.hpp"

namespace arlab {

Vocabulary Vocabulary::build(std::vector<std::string> surfaces, std::string_view pad, std::string_view eos) {
  if (surfaces.empty()) throw MissingReserved("empty vocabulary");
  Vocabulary v;
  v.entries_ = std::move(surfaces);
  for (std::size_t i = 0; i < v.entries_.size(); ++i) {
    auto [it, inserted] = v.index_.emplace(v.entries_[i], static_cast<TokenId>(i));
    if (!inserted) throw DuplicateToken("duplicate token '" + v.entries_[i] + "'");
  }
  auto p = v.find(pad);
  auto e = v.find(eos);
  if (!p) throw MissingReserved("pad token '" + std::string(pad) + "' not in vocabulary");
  if (!e) throw MissingReserved("eos token '" + std::string(eos) + "' not in vocabulary");
  if (*p == *e) throw MissingReserved("pad and eos must be distinct");
  v.pad_id_ = *p;
  v.eos_id_ = *e;
  return v;
}

Vocabulary Vocabulary::boolean() { return build({"0", "1", "<pad>", "<eos>"}, "<pad>", "<eos>"); }

bool Vocabulary::is_boolean() const { return *this == boolean(); }

const std::string& Vocabulary::surface(TokenId id) const {
  if (!valid(id)) throw InvalidToken("token id " + std::to_string(id) + " out of range");
  return entries_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view surface) const {
  auto found = find(surface);
  if (!found) throw InvalidToken("unknown token '" + std::string(surface) + "'");
  return *found;
}

nlohmann::json Vocabulary::to_json() const {
  return {{"tokens", entries_}, {"pad", surface(pad_id_)}, {"eos", surface(eos_id_)}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    return build(j.at("tokens").get<std::vector<std::string>>(), j.at("pad").get<std::string>(),
                 j.at("eos").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed vocabulary: ") + e.what());
  }
}

void TokenSeq::validate(const Vocabulary& vocab) const {
  if (prompt_len > ids.size()) throw InvalidToken("prompt_len exceeds sequence length");
  for (TokenId id : ids) {
    if (!vocab.valid(id)) throw InvalidToken("token id " + std::to_string(id) + " out of range");
  }
}

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<std::vector<double>> rows)
    : dim_(dim), rows_(std::move(rows)) {
  for (const auto& r : rows_) {
    if (r.size() != dim_) throw ModelError("embedding row width mismatch");
    for (double v : r) {
      if (!std::isfinite(v)) throw ModelError("non-finite embedding entry");
    }
  }
}

EmbeddingTable EmbeddingTable::theory() { return EmbeddingTable(2, {{1, 0}, {1, 1}, {0, 0}, {0, 0}}); }

EmbeddedSeq embed_sequence(const EmbeddingTable& table, const TokenSeq& seq, std::size_t target_len,
                           TokenId pad_id) {
  if (seq.size() > target_len) {
    throw LengthOverflow("sequence of length " + std::to_string(seq.size()) + " exceeds " +
                         std::to_string(target_len));
  }
  EmbeddedSeq out;
  out.dim = table.dim();
  out.len = target_len;
  out.data.reserve(target_len * out.dim);
  for (std::size_t p = 0; p < target_len; ++p) {
    const auto& r = table.row(p < seq.size() ? seq.ids[p] : pad_id);
    out.data.insert(out.data.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace arlab
