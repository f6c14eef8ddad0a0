#include <gtest/gtest.h>

#include <cstdio>
#include <map>
#include <regex>
#include <sstream>

#include "../support/fixtures.hpp"
#include "rumil/cli.hpp"

using namespace rumil;
using namespace rumil::cli;
using Args = std::vector<std::string>;

namespace {

RunConfig parse(const Args& args, std::optional<std::string> env = std::nullopt) {
  std::ostringstream out;
  auto cfg = parse_command_line(args, out, std::move(env));
  EXPECT_TRUE(cfg.has_value());
  return cfg.value_or(RunConfig{});
}

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(const Args& args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run(args, in, out, err);
  return {code, out.str(), err.str()};
}

// Labeled sentences with class-specific cue words, noisy spellings included.
std::string labeled_corpus(int rows, std::uint64_t seed) {
  const std::vector<std::vector<std::string>> cues = {
      {"bakwas", "ghatiya", "kharab", "bekaar"}, {"theek", "normal", "average", "chalega"}, {"zabardast", "acha", "achaa", "shandar"}};
  const std::vector<std::string> filler = {"phone", "camera", "battery", "yr", "ye", "hai", "kesi"};
  const std::vector<std::string> names = {"negative", "neutral", "positive"};
  std::mt19937_64 gen(seed);
  std::string text;
  for (int i = 0; i < rows; ++i) {
    const auto c = static_cast<std::size_t>(i % 3);
    std::string line;
    for (int k = 0; k < 6; ++k) {
      const auto& pool = k < 2 || gen() % 2 ? cues[c] : filler;
      line += (line.empty() ? "" : " ") + pool[gen() % pool.size()];
    }
    text += line + "\t" + names[c] + "\n";
  }
  return text;
}

std::string raw_of(const std::string& labeled) {
  std::string raw;
  std::istringstream in(labeled);
  for (std::string line; std::getline(in, line);) raw += line.substr(0, line.find('\t')) + "\n";
  return raw;
}

// Every "--flag ... (default: X)" pair in a help text.
std::map<std::string, std::string> help_defaults(const std::string& help) {
  std::map<std::string, std::string> out;
  const std::regex flag("(--[a-z-]+)[^\\n]*?\\(default: ([^)]*)\\)");
  const std::regex wrapped("(--[a-z-]+)[^\\n]*\\n\\s+[^\\n]*?\\(default: ([^)]*)\\)");
  for (const auto* re : {&flag, &wrapped}) {
    for (std::sregex_iterator it(help.begin(), help.end(), *re), end; it != end; ++it) {
      out.emplace((*it)[1].str(), (*it)[2].str());
    }
  }
  return out;
}

}  // namespace

TEST(Defaults, EmbeddingValues) {
  const auto w2v = parse({"embed", "-o", "x"});
  EXPECT_EQ(w2v.dim, 200u);
  EXPECT_EQ(w2v.min_count, 5);
  EXPECT_EQ(w2v.effective_epochs(), 20);
  EXPECT_EQ(w2v.effective_window(), 10u);
  EXPECT_EQ(parse({"embed", "-o", "x", "--method", "fasttext"}).effective_window(), 10u);
  EXPECT_EQ(parse({"embed", "-o", "x", "--method", "glove"}).effective_window(), 15u);
  EXPECT_EQ(parse({"embed", "-o", "x", "--method", "glove", "--window", "4"}).effective_window(), 4u);
  EXPECT_EQ(w2v.sgns_config().window, 10u);
  EXPECT_EQ(parse({"embed", "-o", "x", "--method", "glove"}).glove_config().window, 15u);
  EXPECT_EQ(w2v.sgns_config().dim, 200u);
}

TEST(Defaults, ClassifierValues) {
  const auto t = parse({"train", "--train", "a", "-o", "m"});
  const auto fit = t.fit_config();
  EXPECT_EQ(fit.lr, 0.01);
  EXPECT_EQ(fit.epochs, 50);
  EXPECT_EQ(fit.patience, 5);
  EXPECT_EQ(fit.batch_size, 32u);
  EXPECT_EQ(t.static_mode, "mixed");
  EXPECT_EQ(t.bigru, "on");
}

TEST(Defaults, SplitSixtyTenThirty) {
  const auto s = parse({"split", "-o", "d"}).split_spec();
  EXPECT_EQ(s.train_frac, 0.6);
  EXPECT_EQ(s.val_frac, 0.1);
  EXPECT_EQ(s.test_frac, 0.3);
}

TEST(Defaults, SeedFromEnvironmentUnlessFlagGiven) {
  EXPECT_EQ(parse({"split", "-o", "d"}).effective_seed(), 1u);
  EXPECT_EQ(parse({"split", "-o", "d"}, "77").effective_seed(), 77u);
  EXPECT_EQ(parse({"split", "-o", "d", "--seed", "5"}, "77").effective_seed(), 5u);
}

TEST(Help, ListedDefaultsMatchConfig) {
  const auto embed = help_defaults(help_text("embed"));
  EXPECT_EQ(embed.at("--dim"), "200");
  EXPECT_EQ(embed.at("--min-count"), "5");
  EXPECT_EQ(embed.at("--epochs"), "20");
  EXPECT_EQ(embed.at("--window"), "10 for w2v and fasttext, 15 for glove");
  EXPECT_EQ(embed.at("--method"), "w2v");
  const auto train = help_defaults(help_text("train"));
  EXPECT_EQ(train.at("--patience"), "5");
  EXPECT_EQ(train.at("--batch"), "32");
  EXPECT_EQ(train.at("--max-len"), "64");
  EXPECT_EQ(train.at("--epochs").substr(0, 14), "50 for hybrid,");
  EXPECT_EQ(train.at("--lr").substr(0, 16), "0.01 for hybrid,");
  EXPECT_EQ(train.at("--static-mode").find("mixed") != std::string::npos, true);
  const auto split = help_defaults(help_text("split"));
  EXPECT_EQ(split.at("--train-frac"), "0.6");
  EXPECT_EQ(split.at("--val-frac"), "0.1");
  EXPECT_EQ(split.at("--test-frac"), "0.3");
  const RunConfig d;
  EXPECT_EQ(std::stod(split.at("--train-frac")), d.train_frac);
  EXPECT_EQ(std::stoul(train.at("--batch")), d.batch);
  EXPECT_EQ(std::stol(embed.at("--min-count")), d.min_count);
}

TEST(Help, EverySubcommandHasHelp) {
  for (const char* sub : {"normalize", "vocab", "embed", "nearest", "split", "train", "eval", "predict"}) {
    const auto r = run_cli({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
  }
}

TEST(ExitCodes, UsageErrorsReturnOne) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"bogus"}).code, 1);
  EXPECT_EQ(run_cli({"embed"}).code, 1);
  EXPECT_EQ(run_cli({"embed", "-o", "x", "--method", "bert"}).code, 1);
  const auto r = run_cli({"split", "-o", "d", "--seed", "nope"});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST(ExitCodes, DataErrorsReturnTwo) {
  fixtures::TempDir dir("cli_data");
  const auto r = run_cli({"split", "-o", (dir / "s").string()}, "acha\tgreat\n");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("BadLabel"), std::string::npos);
  EXPECT_EQ(run_cli({"split", "-o", (dir / "s").string()}, "no tab here\n").code, 2);
  EXPECT_EQ(run_cli({"eval", "-m", (dir / "missing").string(), "--test", (dir / "missing").string()}).code, 2);
}

TEST(Normalize, StreamsLines) {
  const auto r = run_cli({"normalize"}, "Yr KESIIII aaaaala phone hai!!\n\nAchaa\n");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "yar kese aala phone hai\n\nacha\n");
}

TEST(ConfigFile, FlagsOverrideFileValues) {
  fixtures::TempDir dir("cli_cfg");
  fixtures::write_text(dir / "run.ini", "[split]\ntrain-frac=0.5\nval-frac=0.2\ntest-frac=0.3\nseed=9\n");
  const auto from_file = parse({"--config", (dir / "run.ini").string(), "split", "-o", "d"});
  EXPECT_EQ(from_file.train_frac, 0.5);
  EXPECT_EQ(from_file.val_frac, 0.2);
  EXPECT_EQ(from_file.effective_seed(), 9u);
  const auto overridden =
      parse({"--config", (dir / "run.ini").string(), "split", "-o", "d", "--train-frac", "0.6", "--val-frac", "0.1",
             "--seed", "3"});
  EXPECT_EQ(overridden.train_frac, 0.6);
  EXPECT_EQ(overridden.val_frac, 0.1);
  EXPECT_EQ(overridden.effective_seed(), 3u);
}

TEST(EndToEnd, PipelineIsByteReproducible) {
  const std::string labeled = labeled_corpus(90, 4);
  std::vector<std::map<std::string, std::string>> outputs;
  for (int pass = 0; pass < 2; ++pass) {
    fixtures::TempDir dir("cli_e2e");
    const auto p = [&](const char* name) { return (dir / name).string(); };
    fixtures::write_text(dir / "all.tsv", labeled);
    fixtures::write_text(dir / "raw.txt", raw_of(labeled));
    std::map<std::string, std::string> got;
    auto step = [&](const Args& args, const std::string& in = "") {
      const auto r = run_cli(args, in);
      EXPECT_EQ(r.code, 0) << args[0] << ": " << r.err;
      return r;
    };
    got["normalize"] = step({"normalize", "-i", p("raw.txt")}).out;
    got["vocab"] = step({"vocab", "-i", p("raw.txt"), "--min-count", "1"}).out;
    for (const char* m : {"w2v", "fasttext", "glove"}) {
      step({"embed", "-i", p("raw.txt"), "-o", (dir / (std::string(m) + ".txt")).string(), "--method", m, "--dim", "6",
            "--epochs", "2", "--min-count", "1", "--buckets", "1000", "--seed", "3"});
      got[std::string("embed.") + m] = fixtures::read_text(dir / (std::string(m) + ".txt"));
    }
    got["nearest"] = step({"nearest", "-e", p("w2v.txt"), "-q", "acha", "-k", "3"}).out;
    step({"split", "-i", p("all.tsv"), "-o", p("parts"), "--seed", "2"});
    for (const char* f : {"train.tsv", "val.tsv", "test.tsv"}) got[f] = fixtures::read_text(dir / "parts" / f);
    step({"train", "--train", p("parts/train.tsv"), "--val", p("parts/val.tsv"), "-o", p("model.ckpt"), "--min-count",
          "1", "--max-len", "8", "--w2v", p("w2v.txt"), "--fasttext", p("fasttext.txt"), "--glove", p("glove.txt"),
          "--hidden", "4", "--bigru-hidden", "3", "--epochs", "3", "--batch", "8", "--seed", "5", "--history",
          p("history.tsv")});
    got["model"] = fixtures::read_text(dir / "model.ckpt");
    got["history"] = fixtures::read_text(dir / "history.tsv");
    got["eval"] = step({"eval", "-m", p("model.ckpt"), "--test", p("parts/test.tsv"), "--report-kv", p("report.kv")}).out;
    got["report"] = fixtures::read_text(dir / "report.kv");
    got["predict"] = step({"predict", "-m", p("model.ckpt")}, raw_of(fixtures::read_text(dir / "parts" / "test.tsv"))).out;
    step({"train", "--train", p("parts/train.tsv"), "-o", p("lr.json"), "--arch", "lr", "--min-count", "1", "--epochs",
          "20"});
    got["lr"] = fixtures::read_text(dir / "lr.json");
    got["lr.eval"] = step({"eval", "-m", p("lr.json"), "--test", p("parts/test.tsv")}).out;
    step({"train", "--train", p("parts/train.tsv"), "-o", p("nb.json"), "--arch", "nb", "--min-count", "1"});
    got["nb.predict"] = step({"predict", "-m", p("nb.json")}, "acha phone\nbakwas\n").out;
    outputs.push_back(got);
  }
  for (const auto& [key, value] : outputs[0]) {
    EXPECT_FALSE(value.empty()) << key;
    EXPECT_EQ(value, outputs[1].at(key)) << key;
  }
  EXPECT_NE(outputs[0]["report"].find("accuracy="), std::string::npos);
  EXPECT_EQ(std::count(outputs[0]["history"].begin(), outputs[0]["history"].end(), '\n'), 3);
}

class PredictCli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fixtures::TempDir("cli_predict");
    const std::string labeled = labeled_corpus(60, 8);
    fixtures::write_text(*dir_ / "train.tsv", labeled);
    fixtures::write_text(*dir_ / "raw.txt", raw_of(labeled));
    Args train = {"train", "--train", (*dir_ / "train.tsv").string(), "--val", (*dir_ / "train.tsv").string(), "-o",
                  model(), "--min-count", "1", "--hidden", "3", "--bigru", "off", "--epochs", "2"};
    for (const std::string m : {"w2v", "fasttext", "glove"}) {
      const auto path = (*dir_ / (m + ".txt")).string();
      ASSERT_EQ(run_cli({"embed", "-i", (*dir_ / "raw.txt").string(), "-o", path, "--method", m, "--dim", "4",
                         "--epochs", "1", "--min-count", "1", "--buckets", "500"})
                    .code,
                0);
      train.insert(train.end(), {"--" + m, path});
    }
    const auto r = run_cli(train);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::string model() { return (*dir_ / "m.ckpt").string(); }
  static fixtures::TempDir* dir_;
};

fixtures::TempDir* PredictCli::dir_ = nullptr;

TEST_F(PredictCli, EmptyInputGivesEmptyOutput) {
  const auto r = run_cli({"predict", "-m", model()}, "");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "");
}

TEST_F(PredictCli, AllPadLineIsFlaggedNotFatal) {
  const auto r = run_cli({"predict", "-m", model()}, "acha phone\n!!! ...\n");
  EXPECT_EQ(r.code, 0);
  std::istringstream lines(r.out);
  std::string first, second;
  std::getline(lines, first);
  std::getline(lines, second);
  EXPECT_EQ(first.find('\t'), std::string::npos);
  EXPECT_TRUE(second.ends_with("\tall-pad")) << second;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST_F(PredictCli, SameLineSameLabel) {
  const auto r = run_cli({"predict", "-m", model()}, "zabardast phone\nzabardast phone\n");
  std::istringstream lines(r.out);
  std::string a, b;
  std::getline(lines, a);
  std::getline(lines, b);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a == "negative" || a == "neutral" || a == "positive") << a;
}

TEST_F(PredictCli, EvalRejectsAllPadRows) {
  fixtures::write_text(*dir_ / "bad.tsv", "acha\tpositive\n...\tneutral\n");
  const auto r = run_cli({"eval", "-m", model(), "--test", (*dir_ / "bad.tsv").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("AllPad"), std::string::npos) << r.err;
}

TEST(Binary, SeedEnvironmentReachesSubprocess) {
  fixtures::TempDir dir("cli_bin");
  fixtures::write_text(dir / "all.tsv", labeled_corpus(30, 2));
  const auto split = [&](const std::string& env, const std::string& extra, const char* out) {
    const std::string cmd = env + " \"" RUMIL_BINARY "\" split -i \"" + (dir / "all.tsv").string() + "\" -o \"" +
                            (dir / out).string() + "\" " + extra + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  ASSERT_EQ(split("RUMIL_SEED=41", "", "a"), 0);
  ASSERT_EQ(split("", "--seed 41", "b"), 0);
  ASSERT_EQ(split("RUMIL_SEED=7", "--seed 41", "c"), 0);
  ASSERT_EQ(split("RUMIL_SEED=7", "", "d"), 0);
  const auto a = fixtures::read_text(dir / "a" / "train.tsv");
  EXPECT_EQ(a, fixtures::read_text(dir / "b" / "train.tsv"));
  EXPECT_EQ(a, fixtures::read_text(dir / "c" / "train.tsv"));
  EXPECT_NE(a, fixtures::read_text(dir / "d" / "train.tsv"));
  EXPECT_NE(std::system("\"" RUMIL_BINARY "\" embed > /dev/null 2>&1"), 0);
}
