#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "speclab/types.hpp"

namespace speclab {

/// Byte-level tokenization: ids 0..255 are raw bytes, 256 is EOS.
/// Needs no external vocabulary assets.
inline constexpr TokenId kEosToken = 256;
inline constexpr int kByteVocabSize = 257;

inline TokenSeq tokenize_bytes(std::string_view text, bool append_eos = true) {
  TokenSeq out;
  out.reserve(text.size() + 1);
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  if (append_eos) out.push_back(kEosToken);
  return out;
}

inline std::string detokenize_bytes(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
  }
  return out;
}

enum class CorpusFormat { Auto, Text, Jsonl };

struct Corpus {
  std::vector<TokenSeq> sequences;
  std::size_t total_tokens = 0;
  bool empty_input = false;  // set for zero-byte files so callers can warn
};

/// Corpus ingestion: a UTF-8 text file is one record; a .jsonl file holds
/// one {"text": ...} record per line. EOS is appended per record.
inline Corpus ingest_corpus(const std::filesystem::path& path,
                            CorpusFormat format = CorpusFormat::Auto) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open corpus file: " + path.string());
  if (format == CorpusFormat::Auto) {
    format = path.extension() == ".jsonl" ? CorpusFormat::Jsonl : CorpusFormat::Text;
  }

  Corpus corpus;
  if (format == CorpusFormat::Text) {
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (text.empty()) {
      corpus.empty_input = true;
      return corpus;
    }
    corpus.sequences.push_back(tokenize_bytes(text));
  } else {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json record = nlohmann::json::parse(line, nullptr, false);
      if (record.is_discarded() || !record.is_object() || !record.contains("text") ||
          !record["text"].is_string()) {
        throw ValidationError("malformed JSONL record at line " + std::to_string(line_no) +
                              " of " + path.string());
      }
      corpus.sequences.push_back(tokenize_bytes(record["text"].get<std::string>()));
    }
    if (corpus.sequences.empty()) corpus.empty_input = true;
  }
  for (const TokenSeq& s : corpus.sequences) corpus.total_tokens += s.size();
  return corpus;
}

}  // namespace speclab
