#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "seqpl/synthdata.hpp"

using namespace seqpl;

namespace {

// analytic decoder: nearest embedding per frame, then collapse runs
std::vector<int> analytic_decode(const Matrix& embed, const FeatureSequence& v) {
  std::vector<int> per_frame;
  for (int r = 0; r < v.length(); ++r) {
    int best = 0;
    double best_d = 1e300;
    for (int s = 0; s < embed.rows; ++s) {
      double d = 0.0;
      for (int c = 0; c < embed.cols; ++c) {
        const double diff = v.frames(r, c) - embed(s, c);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    per_frame.push_back(best);
  }
  std::vector<int> collapsed;
  for (int s : per_frame)
    if (collapsed.empty() || collapsed.back() != s) collapsed.push_back(s);
  return collapsed;
}

double analytic_word_error(const SynthConfig& config, int n) {
  const Matrix embed = symbol_embeddings(config);
  auto data = generate(config, n);
  int wrong = 0;
  for (const auto& s : data) {
    std::vector<int> truth;
    for (int t : s.label)
      if (t >= Vocabulary::kNumReserved) truth.push_back(t - Vocabulary::kNumReserved);
    if (analytic_decode(embed, s.features) != truth) ++wrong;
  }
  return static_cast<double>(wrong) / n;
}

bool samples_equal(const LabeledSample& a, const LabeledSample& b) {
  return a.id == b.id && a.label == b.label && a.features.frames.rows == b.features.frames.rows &&
         a.features.frames.cols == b.features.frames.cols &&
         a.features.frames.data == b.features.frames.data;
}

}  // namespace

TEST_CASE("config validation") {
  SynthConfig c;
  CHECK_NOTHROW(config_vocabulary(c));
  CHECK(config_vocabulary(c).num_real() == 8);
  CHECK(config_vocabulary(c).symbol(3) == "a");

  auto bad = [](auto mutate) {
    SynthConfig c;
    mutate(c);
    CHECK_THROWS(generate(c, 1));
  };
  bad([](SynthConfig& c) { c.num_symbols = 0; });
  bad([](SynthConfig& c) { c.num_symbols = 27; });
  bad([](SynthConfig& c) { c.len_min = 0; });
  bad([](SynthConfig& c) { c.len_min = 5, c.len_max = 4; });
  bad([](SynthConfig& c) { c.len_max = 8; });  // no room for EOS in s_max
  bad([](SynthConfig& c) { c.frames_min = 0; });
  bad([](SynthConfig& c) { c.frames_min = 3, c.frames_max = 2; });
  bad([](SynthConfig& c) { c.channels = 0; });
  bad([](SynthConfig& c) { c.sigma = -0.1; });
  bad([](SynthConfig& c) { c.confusable_mix = 1.0; });
  bad([](SynthConfig& c) { c.confusable_pairs = {{0, 8}}; });
  bad([](SynthConfig& c) { c.confusable_pairs = {{2, 2}}; });
  bad([](SynthConfig& c) { c.num_symbols = 1; });  // repeat-free needs 2+

  SynthConfig single;
  single.num_symbols = 1;
  single.len_min = single.len_max = 1;
  single.confusable_pairs.clear();  // defaults reference symbols 0..3
  CHECK_NOTHROW(generate(single, 3));

  CHECK_THROWS(generate(SynthConfig{}, 0));
}

TEST_CASE("symbol embeddings: unit rows, determinism, confusable pull") {
  SynthConfig c;
  c.confusable_pairs.clear();
  Matrix e = symbol_embeddings(c);
  CHECK(e.rows == 8);
  CHECK(e.cols == 8);
  for (int i = 0; i < e.rows; ++i) {
    double norm = 0.0;
    for (int j = 0; j < e.cols; ++j) norm += e(i, j) * e(i, j);
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  }
  Matrix e2 = symbol_embeddings(c);
  CHECK(e.data == e2.data);

  SynthConfig cc = c;
  cc.confusable_pairs = {{0, 1}};
  Matrix em = symbol_embeddings(cc);
  auto cosine = [](const Matrix& m, int a, int b) {
    double dot = 0.0;
    for (int j = 0; j < m.cols; ++j) dot += m(a, j) * m(b, j);
    return dot;
  };
  CHECK(cosine(em, 0, 1) > cosine(e, 0, 1));
  // untouched symbols keep their original embeddings
  for (int j = 0; j < e.cols; ++j) CHECK(em(5, j) == e(5, j));
}

TEST_CASE("generation: determinism, label contract, counter-based indexing") {
  SynthConfig c;
  c.seed = 17;
  auto a = generate(c, 40);
  auto b = generate(c, 40);
  REQUIRE(a.size() == 40);
  for (size_t i = 0; i < a.size(); ++i) CHECK(samples_equal(a[i], b[i]));

  for (const auto& s : a) {
    REQUIRE(!s.label.empty());
    CHECK(s.label.back() == Vocabulary::kEos);
    const int len = static_cast<int>(s.label.size()) - 1;
    CHECK(len >= c.len_min);
    CHECK(len <= c.len_max);
    for (int t = 0; t + 1 < len; ++t) CHECK(s.label[t] != s.label[t + 1]);
    CHECK(s.features.channels() == c.channels);
    CHECK(s.features.length() >= len * c.frames_min);
    CHECK(s.features.length() <= len * c.frames_max);
  }

  // sample i does not depend on how many samples are requested
  auto longer = generate(c, 60);
  for (size_t i = 0; i < a.size(); ++i) CHECK(samples_equal(a[i], longer[i]));

  SynthConfig other = c;
  other.seed = 18;
  auto d = generate(other, 40);
  CHECK_FALSE(samples_equal(a[0], d[0]));
}

TEST_CASE("noise-free generation is exactly recoverable by the analytic decoder") {
  SynthConfig c;
  c.sigma = 0.0;
  c.confusable_pairs.clear();
  c.seed = 5;
  CHECK(analytic_word_error(c, 200) == 0.0);
}

TEST_CASE("difficulty grows with sigma and with confusable pairs") {
  SynthConfig c;
  c.seed = 9;
  double prev = -1.0;
  for (double sigma : {0.0, 0.25, 0.5, 0.9, 1.4}) {
    c.sigma = sigma;
    const double err = analytic_word_error(c, 400);
    CHECK(err >= prev - 1e-12);
    prev = err;
  }

  SynthConfig base;
  base.seed = 9;
  base.sigma = 0.5;
  base.confusable_pairs.clear();
  SynthConfig confused = base;
  confused.confusable_pairs = {{0, 1}, {2, 3}, {4, 5}};
  CHECK(analytic_word_error(confused, 400) >= analytic_word_error(base, 400) - 1e-12);
}

TEST_CASE("split: sizes, disjoint union, determinism, oracle labels") {
  SynthConfig c;
  c.seed = 23;
  auto data = generate(c, 200);

  DatasetSplit s = split(data, 0.05, 7);
  CHECK(s.labeled.size() == 10);
  CHECK(s.unlabeled.size() == 190);

  std::set<int64_t> ids;
  for (const auto& e : s.labeled) ids.insert(e.id);
  for (const auto& e : s.unlabeled) ids.insert(e.id);
  CHECK(ids.size() == 200);
  CHECK(*ids.begin() == 0);
  CHECK(*ids.rbegin() == 199);

  // held-out labels match the source samples
  for (const auto& u : s.unlabeled) {
    CHECK(u.eval_only_label() == data[u.id].label);
    CHECK(u.features.frames.data == data[u.id].features.frames.data);
  }

  DatasetSplit again = split(data, 0.05, 7);
  REQUIRE(again.labeled.size() == s.labeled.size());
  for (size_t i = 0; i < s.labeled.size(); ++i)
    CHECK(again.labeled[i].id == s.labeled[i].id);
  DatasetSplit other = split(data, 0.05, 8);
  bool same = other.labeled.size() == s.labeled.size();
  if (same)
    for (size_t i = 0; i < s.labeled.size(); ++i) same &= other.labeled[i].id == s.labeled[i].id;
  CHECK_FALSE(same);

  DatasetSplit all = split(data, 1.0, 3);
  CHECK(all.labeled.size() == 200);
  CHECK(all.unlabeled.empty());

  CHECK_THROWS(split(data, 0.0, 1));
  CHECK_THROWS(split(data, 1.2, 1));
  CHECK_THROWS(split(data, -0.5, 1));
}

TEST_CASE("dataset files: bit-exact round trip, null labels, line errors") {
  SynthConfig c;
  c.seed = 31;
  auto data = generate(c, 12);
  Vocabulary vocab = config_vocabulary(c);
  auto dir = std::filesystem::temp_directory_path();
  auto path = (dir / "seqpl_ds_test.jsonl").string();

  save_dataset(path, vocab, c.channels, data);
  Dataset loaded = load_dataset(path);
  CHECK(loaded.vocab == vocab);
  CHECK(loaded.channels == c.channels);
  REQUIRE(loaded.samples.size() == data.size());
  for (size_t i = 0; i < data.size(); ++i) CHECK(samples_equal(loaded.samples[i], data[i]));

  // labels withheld on disk come back empty
  save_dataset(path, vocab, c.channels, data, false);
  Dataset blind = load_dataset(path);
  for (const auto& s : blind.samples) CHECK(s.label.empty());
  CHECK(blind.samples[3].features.frames.data == data[3].features.frames.data);

  // malformed middle line is reported with its line number
  save_dataset(path, vocab, c.channels, data);
  {
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string l;
    while (std::getline(in, l)) lines.push_back(l);
    lines[4] = lines[4].substr(0, lines[4].size() / 2);  // truncate line 5
    std::ofstream out(path, std::ios::trunc);
    for (const auto& x : lines) out << x << '\n';
  }
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 5"), std::runtime_error);

  {
    std::ofstream out(path, std::ios::trunc);
    out << "{\"format\":\"other\"}\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 1"), std::runtime_error);
  {
    std::ofstream out(path, std::ios::trunc);
  }
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 1"), std::runtime_error);

  std::filesystem::remove(path);
  CHECK_THROWS(load_dataset(path));
  CHECK_THROWS(save_dataset("/nonexistent-dir/x.jsonl", vocab, c.channels, data));
}
