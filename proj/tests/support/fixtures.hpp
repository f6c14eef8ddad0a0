#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rumil/common.hpp"
#include "rumil/corpus.hpp"
#include "rumil/net.hpp"

namespace fixtures {

// Two disjoint topics of 50 words each; every sentence draws 8-12 words
// from a single topic.
struct TwoTopicCorpus {
  std::vector<std::string> topic_a, topic_b;
  std::vector<std::vector<std::string>> sentences;
};

inline TwoTopicCorpus two_topic_corpus(std::size_t sentences = 5000, std::uint64_t seed = 11) {
  TwoTopicCorpus c;
  for (int i = 0; i < 50; ++i) {
    c.topic_a.push_back("alfa" + std::to_string(i));
    c.topic_b.push_back("brav" + std::to_string(i));
  }
  std::mt19937_64 gen(seed);
  for (std::size_t s = 0; s < sentences; ++s) {
    const auto& topic = (gen() & 1) ? c.topic_a : c.topic_b;
    const std::size_t len = 8 + gen() % 5;
    std::vector<std::string> sent;
    for (std::size_t k = 0; k < len; ++k) sent.push_back(topic[gen() % topic.size()]);
    c.sentences.push_back(std::move(sent));
  }
  return c;
}

// 32 labeled sentences, three classes. Each class owns four cue words and
// every sentence carries at least two cues of its class among shared filler.
struct SeparableFixture {
  rumil::corpus::Vocabulary vocab;
  std::vector<std::string> texts;
  rumil::corpus::LabeledDataset data;
};

inline SeparableFixture separable_fixture(std::size_t max_len = 12, std::uint64_t seed = 5) {
  const std::vector<std::vector<std::string>> cues = {
      {"bakwas", "ghatiya", "kharab", "bekar"},
      {"theek", "normal", "average", "chalega"},
      {"zabardast", "acha", "khubsurat", "shandar"}};
  const std::vector<std::string> filler = {"phone", "camera", "battery", "screen", "ye", "hai"};
  std::mt19937_64 gen(seed);
  SeparableFixture f;
  std::vector<std::vector<std::string>> docs;
  for (int i = 0; i < 32; ++i) {
    const int label = i % 3;
    std::vector<std::string> doc;
    const std::size_t len = 4 + gen() % 5;
    for (std::size_t k = 0; k < len; ++k) {
      const bool cue = k < 2 || gen() % 2 == 0;
      const auto& pool = cue ? cues[static_cast<std::size_t>(label)] : filler;
      doc.push_back(pool[gen() % pool.size()]);
    }
    std::shuffle(doc.begin(), doc.end(), gen);
    docs.push_back(doc);
    f.data.labels.push_back(label);
  }
  f.vocab = rumil::corpus::build_vocab(docs, 1);
  f.data.max_len = max_len;
  for (const auto& d : docs) {
    std::string text;
    for (const auto& t : d) text += (text.empty() ? "" : " ") + t;
    f.texts.push_back(text);
    f.data.sequences.push_back(rumil::corpus::pad_to(f.vocab.encode(d), max_len));
  }
  return f;
}

inline rumil::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 0.5) {
  rumil::Matrix m(rows, cols);
  rumil::Rng rng(seed);
  for (auto& v : m.flat()) v = rng.uniform(-scale, scale);
  return m;
}

inline std::array<rumil::Matrix, rumil::net::kChannels> random_tables(std::size_t vocab, std::size_t dim,
                                                                     std::uint64_t seed) {
  return {random_matrix(vocab, dim, seed), random_matrix(vocab, dim, seed + 1), random_matrix(vocab, dim, seed + 2)};
}

// Per-test scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("rumil_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Central-difference derivative of f at x[i].
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace fixtures
