#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rejgen {

enum class EntityTag { none, person, org, money, date, city };

std::string_view to_string(EntityTag tag);
EntityTag parse_entity_tag(std::string_view s);

/// Token inventory. Ids are dense: PAD=0, BOS=1, EOS=2, then ordinary tokens;
/// the rejection class takes id size(), one past the last ordinary token.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kBosToken = "<bos>";
  static constexpr std::string_view kEosToken = "<eos>";
  static constexpr std::string_view kRejToken = "<rej>";

  Vocabulary();

  /// Appends a token; returns the existing id when already present with the same tag.
  int add(std::string_view token, EntityTag tag = EntityTag::none);

  /// |V|: ordinary tokens plus PAD/BOS/EOS, excluding the rejection class.
  int size() const { return static_cast<int>(tokens_.size()); }
  int rej() const { return size(); }
  /// Number of output classes, |V| + 1.
  int classes() const { return size() + 1; }

  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  EntityTag tag(int id) const;
  bool is_entity(int id) const { return tag(id) != EntityTag::none; }
  bool is_special(int id) const { return id == kPad || id == kBos || id == kEos || id == rej(); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  /// One token per line, tab, lexicon tag; the rejection token is the last line.
  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.tags_ == b.tags_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<EntityTag> tags_;
  std::unordered_map<std::string, int> index_;
  std::string rej_token_{kRejToken};
};

}  // namespace rejgen
