#include "rejgen/vocab.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rejgen {

std::string_view to_string(EntityTag tag) {
  switch (tag) {
    case EntityTag::none: return "none";
    case EntityTag::person: return "PERSON";
    case EntityTag::org: return "ORG";
    case EntityTag::money: return "MONEY";
    case EntityTag::date: return "DATE";
    case EntityTag::city: return "CITY";
  }
  return "none";
}

EntityTag parse_entity_tag(std::string_view s) {
  if (s == "none") return EntityTag::none;
  if (s == "PERSON") return EntityTag::person;
  if (s == "ORG") return EntityTag::org;
  if (s == "MONEY") return EntityTag::money;
  if (s == "DATE") return EntityTag::date;
  if (s == "CITY") return EntityTag::city;
  throw std::invalid_argument("unknown lexicon tag '" + std::string(s) + "'");
}

Vocabulary::Vocabulary() {
  add(kPadToken);
  add(kBosToken);
  add(kEosToken);
}

int Vocabulary::add(std::string_view token, EntityTag tag) {
  if (token.empty() || token.find_first_of("\t\n\r ") != std::string_view::npos)
    throw std::invalid_argument("vocabulary: invalid token '" + std::string(token) + "'");
  if (token == kRejToken) throw std::invalid_argument("vocabulary: <rej> is implicit");
  if (auto it = index_.find(std::string(token)); it != index_.end()) {
    if (tags_[it->second] != tag)
      throw std::invalid_argument("vocabulary: token '" + std::string(token) +
                                  "' re-added with a different tag");
    return it->second;
  }
  const int id = size();
  tokens_.emplace_back(token);
  tags_.push_back(tag);
  index_.emplace(tokens_.back(), id);
  return id;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  if (token == kRejToken) return rej();
  if (auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  return std::nullopt;
}

int Vocabulary::id(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw std::out_of_range("vocabulary: unknown token '" + std::string(token) + "'");
}

const std::string& Vocabulary::token(int id) const {
  if (id == rej()) return rej_token_;
  if (id < 0 || id > rej()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

EntityTag Vocabulary::tag(int id) const {
  if (id == rej()) return EntityTag::none;
  if (id < 0 || id > rej()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return tags_[id];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (int i = 0; i < size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += to_string(tags_[i]);
    out += '\n';
  }
  out += std::string(kRejToken) + "\tnone\n";
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("vocabulary line " + std::to_string(lineno) + ": missing tab");
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (rows.size() < 4 || rows[0].first != kPadToken || rows[1].first != kBosToken ||
      rows[2].first != kEosToken || rows.back().first != kRejToken)
    throw std::runtime_error("vocabulary: expected <pad>,<bos>,<eos> first and <rej> last");
  Vocabulary v;
  for (std::size_t i = 3; i + 1 < rows.size(); ++i) {
    const int before = v.size();
    if (v.add(rows[i].first, parse_entity_tag(rows[i].second)) != before)
      throw std::runtime_error("vocabulary: duplicate token '" + rows[i].first + "'");
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_text();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

}  // namespace rejgen
