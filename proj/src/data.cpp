#include "asag/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace asag::data {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_word_byte(c)) {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else {
      flush();
      tokens.emplace_back(1, ch);
    }
  }
  flush();
  return tokens;
}

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kUnkToken));
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw DataError("failed writing vocabulary file " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary file " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < 2 || lines[0] != kPadToken || lines[1] != kUnkToken) {
    throw DataError("vocabulary file " + path + " does not start with <pad>, <unk>");
  }
  Vocabulary v;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (v.add(lines[i]) != i) {
      throw DataError("duplicate token '" + lines[i] + "' at line " + std::to_string(i + 1) +
                      " of " + path);
    }
  }
  return v;
}

Vocabulary build_vocab(std::span<const AnswerPair> corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& pair : corpus) {
    for (auto& t : tokenize(pair.student_text)) ++counts[t];
    for (auto& t : tokenize(pair.reference_text)) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, count] : counts) {
    if (count >= min_count && token != Vocabulary::kPadToken && token != Vocabulary::kUnkToken) {
      ranked.emplace_back(token, count);
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab;
  for (auto& [token, count] : ranked) vocab.add(token);
  return vocab;
}

EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab, Rng& rng,
                               std::size_t dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read embedding file " + path);

  std::map<std::size_t, std::vector<double>> found;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_on(line, ' ');
    if (line_no == 1 && fields.size() == 2) {
      std::size_t a = 0, b = 0;
      auto r1 = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), a);
      auto r2 = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), b);
      if (r1.ec == std::errc() && r2.ec == std::errc() &&
          r1.ptr == fields[0].data() + fields[0].size() &&
          r2.ptr == fields[1].data() + fields[1].size()) {
        continue;  // "count dim" header
      }
    }
    if (fields.size() < 2) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected a token and values");
    }
    const std::size_t width = fields.size() - 1;
    if (dim == 0) dim = width;
    if (width != dim) {
      throw DataError(path + ":" + std::to_string(line_no) + ": dimension " +
                      std::to_string(width) + " differs from " + std::to_string(dim));
    }
    std::vector<double> values(width);
    for (std::size_t i = 0; i < width; ++i) {
      auto f = fields[i + 1];
      auto res = std::from_chars(f.data(), f.data() + f.size(), values[i]);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": cannot parse value '" +
                        std::string(f) + "'");
      }
    }
    std::string token(fields[0]);
    if (vocab.contains(token)) {
      auto id = vocab.id(token);
      if (id != Vocabulary::kPad) found[id] = std::move(values);
    }
  }
  if (dim == 0) throw DataError("embedding file " + path + " is empty and no dimension was given");

  const std::size_t rows = vocab.size();
  std::vector<double> table(rows * dim, 0.0);
  std::size_t covered = 0;
  for (std::size_t id = 0; id < rows; ++id) {
    if (id == Vocabulary::kPad) continue;
    auto it = found.find(id);
    if (it != found.end()) {
      std::copy(it->second.begin(), it->second.end(), table.begin() + id * dim);
      if (id != Vocabulary::kUnk) ++covered;
    } else {
      for (std::size_t j = 0; j < dim; ++j) table[id * dim + j] = rng.uniform(-0.1, 0.1);
    }
  }
  const std::size_t content_rows = rows > 2 ? rows - 2 : 0;
  double coverage = content_rows ? static_cast<double>(covered) / content_rows : 0.0;
  return {Tensor::from({rows, dim}, std::move(table), true), coverage};
}

PaddedIds pad_truncate(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                       std::size_t length) {
  PaddedIds out{std::vector<std::size_t>(length, Vocabulary::kPad),
                std::vector<std::uint8_t>(length, 0)};
  for (std::size_t i = 0; i < std::min(length, tokens.size()); ++i) {
    out.ids[i] = vocab.id(tokens[i]);
    out.mask[i] = 1;
  }
  return out;
}

PaddedIds encode_text(std::string_view text, const Vocabulary& vocab, std::size_t length) {
  auto tokens = tokenize(text);
  if (tokens.empty()) tokens.emplace_back(Vocabulary::kUnkToken);
  return pad_truncate(tokens, vocab, length);
}

Batch make_batch(std::span<const AnswerPair> pairs, std::span<const std::size_t> indices,
                 const Vocabulary& vocab, std::size_t length) {
  Batch b;
  b.size = indices.size();
  b.max_len = length;
  std::vector<std::uint8_t> sm, rm;
  for (auto idx : indices) {
    const auto& pair = pairs[idx];
    if (pair.label != 0 && pair.label != 1) {
      throw DataError("pair '" + pair.id + "' has non-binary label " + std::to_string(pair.label));
    }
    auto s = encode_text(pair.student_text, vocab, length);
    auto r = encode_text(pair.reference_text, vocab, length);
    b.student_ids.insert(b.student_ids.end(), s.ids.begin(), s.ids.end());
    b.reference_ids.insert(b.reference_ids.end(), r.ids.begin(), r.ids.end());
    sm.insert(sm.end(), s.mask.begin(), s.mask.end());
    rm.insert(rm.end(), r.mask.begin(), r.mask.end());
    b.labels.push_back(pair.label);
    b.indices.push_back(idx);
  }
  b.student_mask = Mask::from({b.size, length}, std::move(sm));
  b.reference_mask = Mask::from({b.size, length}, std::move(rm));
  return b;
}

std::vector<Batch> make_batches(std::span<const AnswerPair> pairs, const Vocabulary& vocab,
                                std::size_t length, std::size_t batch_size, Rng* rng) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  if (rng) rng->shuffle(std::span<std::size_t>(order));
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    batches.push_back(make_batch(pairs, std::span<const std::size_t>(order).subspan(start, n),
                                 vocab, length));
  }
  return batches;
}

std::string escape_field(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_field(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\\' || i + 1 == text.size()) {
      out += text[i];
      continue;
    }
    switch (text[++i]) {
      case '\\': out += '\\'; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      default:
        out += '\\';
        out += text[i];
    }
  }
  return out;
}

std::vector<AnswerPair> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read dataset file " + path);
  std::vector<AnswerPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_on(line, '\t');
    if (fields.size() != 4) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    if (fields[1] != "0" && fields[1] != "1") {
      throw DataError(path + ":" + std::to_string(line_no) + ": label must be 0 or 1, got '" +
                      std::string(fields[1]) + "'");
    }
    pairs.push_back({unescape_field(fields[0]), unescape_field(fields[2]),
                     unescape_field(fields[3]), fields[1] == "1" ? 1 : 0});
  }
  return pairs;
}

void write_dataset(std::span<const AnswerPair> pairs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file " + path);
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) {
      throw DataError("pair '" + p.id + "' has non-binary label " + std::to_string(p.label));
    }
    out << escape_field(p.id) << '\t' << p.label << '\t' << escape_field(p.student_text) << '\t'
        << escape_field(p.reference_text) << '\n';
  }
  if (!out) throw DataError("failed writing dataset file " + path);
}

std::size_t positive_keyword_floor(std::size_t k) { return (8 * k + 9) / 10; }
std::size_t negative_keyword_ceiling(std::size_t k) { return (4 * k + 9) / 10; }

void GeneratorConfig::validate() const {
  if (pairs == 0 || pairs % 2 != 0) throw ConfigError("pairs must be a positive even number");
  if (references == 0) throw ConfigError("references must be at least 1");
  if (keywords == 0) throw ConfigError("keywords per reference must be at least 1");
  if (keywords > reference_length) {
    throw ConfigError("infeasible generator config: " + std::to_string(keywords) +
                      " keywords do not fit a reference of length " +
                      std::to_string(reference_length));
  }
  if (concepts < 2 * keywords) {
    throw ConfigError("infeasible generator config: need at least " +
                      std::to_string(2 * keywords) + " concepts");
  }
  if (synonyms == 0 || filler_words == 0) throw ConfigError("synonyms and filler_words must be >= 1");
  if (student_filler_min > student_filler_max) {
    throw ConfigError("student_filler_min exceeds student_filler_max");
  }
  if (noise < 0.0 || noise > 1.0) throw ConfigError("noise must lie in [0, 1]");
  if (reference_filler_share < 0.0 || reference_filler_share > 1.0) {
    throw ConfigError("reference_filler_share must lie in [0, 1]");
  }
}

namespace {

struct ReferenceAnswer {
  std::vector<std::size_t> concepts;
  std::vector<std::string> filler;
  std::string text;
};

std::string keyword_token(std::size_t concept_id, std::size_t synonym) {
  return "c" + std::to_string(concept_id) + "s" + std::to_string(synonym);
}

std::string filler_token(std::size_t n) { return "w" + std::to_string(n); }

std::size_t uniform_between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// `count` distinct entries of `pool`, in random order.
std::vector<std::size_t> sample_distinct(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
  rng.shuffle(std::span<std::size_t>(pool));
  pool.resize(std::min(count, pool.size()));
  return pool;
}

}  // namespace

std::vector<AnswerPair> generate_synthetic_dataset(const GeneratorConfig& config, Rng& rng) {
  config.validate();
  const std::size_t k = config.keywords;
  const std::size_t pos_floor = positive_keyword_floor(k);
  const std::size_t neg_ceiling = negative_keyword_ceiling(k);

  std::vector<std::size_t> all_concepts(config.concepts);
  std::iota(all_concepts.begin(), all_concepts.end(), 0);

  std::vector<ReferenceAnswer> refs(config.references);
  for (auto& ref : refs) {
    ref.concepts = sample_distinct(all_concepts, k, rng);
    std::vector<std::string> tokens;
    for (auto c : ref.concepts) tokens.push_back(keyword_token(c, rng.below(config.synonyms)));
    for (std::size_t i = k; i < config.reference_length; ++i) {
      ref.filler.push_back(filler_token(rng.below(config.filler_words)));
      tokens.push_back(ref.filler.back());
    }
    rng.shuffle(std::span<std::string>(tokens));
    ref.text = join(tokens);
  }

  std::vector<int> labels(config.pairs, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(config.pairs / 2), 1);
  rng.shuffle(std::span<int>(labels));

  const std::size_t lexicon = config.concepts * config.synonyms + config.filler_words;
  auto random_token = [&]() {
    auto n = rng.below(lexicon);
    if (n < config.concepts * config.synonyms) {
      return keyword_token(n / config.synonyms, n % config.synonyms);
    }
    return filler_token(n - config.concepts * config.synonyms);
  };

  std::vector<AnswerPair> pairs;
  pairs.reserve(config.pairs);
  for (std::size_t i = 0; i < config.pairs; ++i) {
    const std::size_t r = i % config.references;
    const auto& ref = refs[r];
    const std::set<std::size_t> own(ref.concepts.begin(), ref.concepts.end());
    std::vector<std::size_t> foreign_pool;
    for (auto c : all_concepts)
      if (!own.count(c)) foreign_pool.push_back(c);

    std::vector<std::size_t> chosen;
    const std::size_t keyword_total = uniform_between(rng, pos_floor, k);
    if (labels[i] == 1) {
      chosen = sample_distinct(ref.concepts, keyword_total, rng);
    } else {
      const std::size_t kept = uniform_between(rng, 0, neg_ceiling - 1);
      chosen = sample_distinct(ref.concepts, kept, rng);
      std::vector<std::size_t> donors;
      const bool borrow = config.references > 1 && rng.bernoulli(0.5);
      if (borrow) {
        std::size_t other = (r + 1 + rng.below(config.references - 1)) % config.references;
        for (auto c : refs[other].concepts)
          if (!own.count(c)) donors.push_back(c);
        donors = sample_distinct(donors, keyword_total - kept, rng);
      }
      std::set<std::size_t> taken(donors.begin(), donors.end());
      std::vector<std::size_t> rest;
      for (auto c : foreign_pool)
        if (!taken.count(c)) rest.push_back(c);
      auto extra = sample_distinct(rest, keyword_total - kept - donors.size(), rng);
      chosen.insert(chosen.end(), donors.begin(), donors.end());
      chosen.insert(chosen.end(), extra.begin(), extra.end());
    }

    std::vector<std::string> tokens;
    for (auto c : chosen) tokens.push_back(keyword_token(c, rng.below(config.synonyms)));
    const std::size_t filler = uniform_between(rng, config.student_filler_min, config.student_filler_max);
    for (std::size_t f = 0; f < filler; ++f) {
      if (!ref.filler.empty() && rng.bernoulli(config.reference_filler_share)) {
        tokens.push_back(ref.filler[rng.below(ref.filler.size())]);
      } else {
        tokens.push_back(filler_token(rng.below(config.filler_words)));
      }
    }
    rng.shuffle(std::span<std::string>(tokens));
    if (config.noise > 0.0) {
      for (auto& t : tokens)
        if (rng.bernoulli(config.noise)) t = random_token();
    }
    pairs.push_back({"r" + std::to_string(r) + "-p" + std::to_string(i), join(tokens), ref.text,
                     labels[i]});
  }
  return pairs;
}

}  // namespace asag::data
