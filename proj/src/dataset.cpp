#include "arlab/dataset.hpp"

#include <algorithm>
#include <fstream>

#include "arlab/error.hpp"

namespace arlab {

std::size_t CoTDataset::max_len() const {
  std::size_t m = 0;
  for (const auto& s : samples) m = std::max(m, s.x.size() + s.z.size());
  return m;
}

void CoTDataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string where = "sample " + std::to_string(i) + ": ";
    if (s.x.size() != prompt_len) throw FormatError(where + "prompt length differs from dataset prompt_len");
    for (TokenId id : s.x) {
      if (!vocab.valid(id)) throw FormatError(where + "prompt id " + std::to_string(id) + " not in vocabulary");
    }
    for (TokenId id : s.z) {
      if (!vocab.valid(id)) throw FormatError(where + "continuation id " + std::to_string(id) + " not in vocabulary");
    }
    if (eos_terminated && (s.z.empty() || s.z.back() != vocab.eos_id())) {
      throw FormatError(where + "continuation does not end with EOS");
    }
  }
}

void write_jsonl(const CoTDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write dataset " + path);
  nlohmann::json header = {{"format", "arlab.cot"},
                           {"version", 1},
                           {"vocab", dataset.vocab.to_json()},
                           {"prompt_len", dataset.prompt_len},
                           {"eos_terminated", dataset.eos_terminated},
                           {"meta", dataset.meta}};
  out << header.dump() << '\n';
  for (const auto& s : dataset.samples) out << nlohmann::json{{"x", s.x}, {"z", s.z}}.dump() << '\n';
  if (!out) throw IOError("write failed for " + path);
}

CoTDataset read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open dataset " + path);
  CoTDataset ds;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError(path + ":" + std::to_string(line_no) + ": " + why);
  };

  if (!std::getline(in, line)) {
    line_no = 1;
    fail("missing header line");
  }
  line_no = 1;
  try {
    auto header = nlohmann::json::parse(line);
    if (header.at("format").get<std::string>() != "arlab.cot") fail("not an arlab CoT dataset");
    ds.vocab = Vocabulary::from_json(header.at("vocab"));
    ds.prompt_len = header.at("prompt_len").get<std::size_t>();
    ds.eos_terminated = header.at("eos_terminated").get<bool>();
    ds.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad header: ") + e.what());
  } catch (const FormatError& e) {
    fail(e.what());
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    CoTSample s;
    try {
      auto j = nlohmann::json::parse(line);
      s.x = j.at("x").get<std::vector<TokenId>>();
      s.z = j.at("z").get<std::vector<TokenId>>();
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
    }
    if (s.x.size() != ds.prompt_len) fail("prompt length differs from header prompt_len");
    for (TokenId id : s.x) {
      if (!ds.vocab.valid(id)) fail("id " + std::to_string(id) + " not in header vocabulary");
    }
    for (TokenId id : s.z) {
      if (!ds.vocab.valid(id)) fail("id " + std::to_string(id) + " not in header vocabulary");
    }
    if (ds.eos_terminated && (s.z.empty() || s.z.back() != ds.vocab.eos_id())) {
      fail("continuation does not end with EOS");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace arlab
