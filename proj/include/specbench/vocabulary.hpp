#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace specbench {

// Case-sensitive token set with a stable order (byte-wise sorted).
class Vocabulary {
 public:
  Vocabulary() = default;
  // Sorts and deduplicates `tokens`.
  explicit Vocabulary(std::vector<std::string> tokens,
                      std::vector<std::string> provenance = {});

  bool contains(std::string_view token) const;
  std::optional<std::size_t> index_of(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::string>& provenance() const { return provenance_; }

  // Content hash of the token list; used as the vocab id on the wire when a
  // backend does not assign one.
  std::string digest() const;

  // One token per line. Lines starting with "#model " record provenance.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::string> provenance_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ModelVocab {
  std::string model_id;
  std::vector<std::string> tokens;
};

// Exact case-sensitive intersection. Throws ConfigError on no input or an
// empty intersection.
Vocabulary unified_vocab(std::span<const ModelVocab> vocabs);

}  // namespace specbench
