#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace arlab {

using TokenId = std::int32_t;

/// Token dictionary. Ids are positions in `entries()`; PAD and EOS are
/// ordinary entries that are additionally designated as reserved.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Throws DuplicateToken / MissingReserved.
  static Vocabulary build(std::vector<std::string> surfaces, std::string_view pad, std::string_view eos);

  /// The theory vocabulary {"0","1","<pad>","<eos>"}; "0" is id 0 and "1" is id 1.
  static Vocabulary boolean();

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& entries() const { return entries_; }
  const std::string& surface(TokenId id) const;
  std::optional<TokenId> find(std::string_view surface) const;
  /// Like find() but throws InvalidToken when absent.
  TokenId id(std::string_view surface) const;
  bool valid(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < entries_.size(); }

  TokenId pad_id() const { return pad_id_; }
  TokenId eos_id() const { return eos_id_; }

  /// True when this is exactly the theory vocabulary.
  bool is_boolean() const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.entries_ == b.entries_ && a.pad_id_ == b.pad_id_ && a.eos_id_ == b.eos_id_;
  }

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_id_ = 0;
  TokenId eos_id_ = 0;
};

/// A run of token ids whose first `prompt_len` entries are the prompt.
struct TokenSeq {
  std::vector<TokenId> ids;
  std::size_t prompt_len = 0;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }

  /// Throws InvalidToken if an id is outside `vocab` or prompt_len > size().
  void validate(const Vocabulary& vocab) const;

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

/// Per-token embedding vectors (the map psi), one row per vocabulary id.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  /// Throws ModelError if the row count or widths are inconsistent or any entry is non-finite.
  EmbeddingTable(std::size_t dim, std::vector<std::vector<double>> rows);

  /// psi(0)=(1,0), psi(1)=(1,1), PAD=(0,0), EOS=(0,0) over the Boolean vocabulary.
  /// Coordinate 0 is a constant-one channel, coordinate 1 carries the bit.
  static EmbeddingTable theory();

  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return rows_.size(); }
  const std::vector<double>& row(TokenId id) const { return rows_.at(static_cast<std::size_t>(id)); }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::vector<double>> rows_;
};

/// Column-major d x target_len matrix of embedded positions.
struct EmbeddedSeq {
  std::size_t dim = 0;
  std::size_t len = 0;
  std::vector<double> data;  // data[p * dim + c]

  double at(std::size_t c, std::size_t p) const { return data[p * dim + c]; }
  friend bool operator==(const EmbeddedSeq&, const EmbeddedSeq&) = default;
};

/// Column p is psi(ids[p]) for p < seq.size(); the rest are the PAD row.
/// Throws LengthOverflow when seq is longer than target_len.
EmbeddedSeq embed_sequence(const EmbeddingTable& table, const TokenSeq& seq, std::size_t target_len,
                           TokenId pad_id);

}  // namespace arlab
