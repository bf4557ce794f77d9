#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "extsum/cli.hpp"

namespace fs = std::filesystem;
using namespace extsum;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

const std::string kFixture = std::string(EXTSUM_FIXTURE_DIR) + "/fixture_corpus.jsonl";

const std::vector<std::string> kTinyModel = {"--d-model", "8",  "--heads",  "2", "--d-ff",         "8",
                                             "--lora-rank", "2", "--epochs", "1", "--accumulation", "8",
                                             "--lr",        "0.01"};

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("extsum_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }

    std::string labeled() {
        const auto r = run_cli({"label", "--in", kFixture, "--out", path("labeled.jsonl")});
        EXPECT_EQ(r.code, 0) << r.err;
        return path("labeled.jsonl");
    }

    Result train(const std::string& data, const std::string& out, std::vector<std::string> extra = {}) {
        std::vector<std::string> args{"train", "--data", data, "--out", out};
        args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
        args.insert(args.end(), extra.begin(), extra.end());
        return run_cli(args);
    }

    fs::path dir;
};

}  // namespace

TEST_F(CliTest, RougeIdenticalFiles) {
    spit(dir / "a.txt", "The cat sat on the mat. It purred.");
    const auto r = run_cli({"rouge", path("a.txt"), path("a.txt")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    for (const char* m : {"rouge1", "rouge2", "rougeL"}) EXPECT_EQ(j[m]["f1"].get<double>(), 1.0);
}

TEST_F(CliTest, RougeSixDecimals) {
    spit(dir / "a.txt", "the cat sat");
    spit(dir / "b.txt", "the cat ran");
    const auto r = run_cli({"rouge", path("a.txt"), path("b.txt")});
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("0.666667"), std::string::npos) << r.out;
    EXPECT_EQ(run_cli({"rouge", path("a.txt"), path("missing.txt")}).code, 2);
}

TEST_F(CliTest, LabelAddsLabelsAndIsByteIdentical) {
    const std::string out = labeled();
    const auto first = slurp(out);
    const auto docs = load_jsonl(out);
    ASSERT_EQ(docs.size(), 50u);
    for (const auto& d : docs) {
        ASSERT_TRUE(d.labels.has_value());
        EXPECT_EQ(d.labels->size(), d.sentences.size());
        EXPECT_TRUE(d.extra.contains("oracle_score"));
    }
    ASSERT_EQ(run_cli({"label", "--in", kFixture, "--out", out, "--workers", "2"}).code, 0);
    EXPECT_EQ(slurp(out), first);
    EXPECT_TRUE(fs::exists(out + ".manifest.json"));
}

TEST_F(CliTest, MissingInputIsIoError) {
    const auto r = run_cli({"train", "--data", path("missing.jsonl")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("missing.jsonl"), std::string::npos) << r.err;
}

TEST_F(CliTest, UsageErrors) {
    auto r = run_cli({"frobnicate"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    r = run_cli({"rouge", "--bogus-flag", "x", "y"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(run_cli({}).code, 1);
    EXPECT_EQ(run_cli({"eval", "--in", kFixture, "--selector", "magic"}).code, 1);
    EXPECT_EQ(run_cli({"train", "--data", kFixture, "--rope-scale", "8", "--rope-ratio", "0.125"}).code, 1);
}

TEST_F(CliTest, HelpDocumentsEveryFlagWithDefault) {
    const auto top = run_cli({"--help"});
    EXPECT_EQ(top.code, 0);
    for (const char* sub : {"label", "train", "eval", "rouge", "analyze-positions", "gradcheck", "sweep"}) {
        const auto r = run_cli({sub, "--help"});
        EXPECT_EQ(r.code, 0) << sub;
        EXPECT_NE(top.out.find(sub), std::string::npos);
        for (const char* flag : {"--config"}) EXPECT_NE(r.out.find(flag), std::string::npos) << sub;
    }
    const auto train = run_cli({"train", "--help"}).out;
    for (const char* s : {"--lr FLOAT [3e-05]", "--accumulation UINT [32]", "--epochs UINT [5]", "--lora-rank UINT [8]",
                          "--rope-scale FLOAT [8]", "--attention-mode", "[causal]", "--frozen", "--seed UINT [0]",
                          "--workers UINT [1]", "--max-len UINT [0]", "--val-interval FLOAT [0.2]"}) {
        EXPECT_NE(train.find(s), std::string::npos) << s;
    }
    const auto eval = run_cli({"eval", "--help"}).out;
    for (const char* s : {"--k UINT [7]", "--bins UINT [20]", "--trigram-blocking", "[model]"})
        EXPECT_NE(eval.find(s), std::string::npos) << s;
    const auto sweep = run_cli({"sweep", "--help"}).out;
    EXPECT_NE(sweep.find("0.01,0.05,0.1,1"), std::string::npos) << sweep;
}

TEST_F(CliTest, ConfigPrecedence) {
    const std::string data = labeled();
    spit(dir / "c.ini", "# settings\n[train]\nlora-rank = 3\nseed = 5\nfrozen = true\nd-model = 16\n");
    std::vector<std::string> args{"train", "--data", data, "--out", path("m.ckpt"), "--config", path("c.ini"),
                                  "--seed",  "9",  "--epochs", "1", "--accumulation", "16", "--max-steps", "1"};
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = nlohmann::json::parse(slurp(path("m.ckpt.manifest.json")));
    EXPECT_EQ(m["config"]["lora-rank"], "3");
    EXPECT_EQ(m["config"]["seed"], "9");
    EXPECT_EQ(m["config"]["frozen"], "true");
    EXPECT_EQ(m["config"]["heads"], "4");
    EXPECT_EQ(m["seed"], 9);
    EXPECT_EQ(m["subcommand"], "train");
    const auto ck = load_checkpoint(path("m.ckpt"));
    EXPECT_EQ(ck.model_config.lora_rank, 3u);
    EXPECT_EQ(ck.model_config.d_model, 16u);
    EXPECT_TRUE(ck.train_config.frozen);

    spit(dir / "bad.ini", "no-such-option = 1\n");
    EXPECT_EQ(run_cli({"train", "--data", data, "--config", path("bad.ini")}).code, 1);
    EXPECT_EQ(run_cli({"train", "--data", data, "--config", path("absent.ini")}).code, 2);
}

TEST_F(CliTest, ManifestReplayReproducesOutput) {
    const std::string data = labeled();
    ASSERT_EQ(train(data, path("a.ckpt"), {"--rope-ratio", "0.25", "--seed", "4"}).code, 0);
    const auto first = slurp(path("a.ckpt"));
    fs::remove(path("a.ckpt"));
    const auto r = run_cli({"train", "--config", path("a.ckpt.manifest.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(path("a.ckpt")), first);
    EXPECT_EQ(load_checkpoint(path("a.ckpt")).model_config.rope_scaling(), 0.25);
}

TEST_F(CliTest, PipelineAndDeterminism) {
    const std::string data = labeled();
    ASSERT_EQ(train(data, path("m1.ckpt"), {"--seed", "2"}).code, 0);
    ASSERT_EQ(train(data, path("m2.ckpt"), {"--seed", "2"}).code, 0);
    EXPECT_EQ(slurp(path("m1.ckpt")), slurp(path("m2.ckpt")));
    EXPECT_TRUE(fs::exists(path("m1.ckpt.log.jsonl")));
    EXPECT_TRUE(fs::exists(path("m1.ckpt.vocab.txt")));
    std::istringstream log(slurp(path("m1.ckpt.log.jsonl")));
    std::string line;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("step") && j.contains("train_loss") && j.contains("timestamp"));
    }

    for (const char* rep : {"r1.json", "r2.json"}) {
        const auto r = run_cli({"eval", "--checkpoint", path("m1.ckpt"), "--in", data, "--out", path(rep), "--k", "3"});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(slurp(path("r1.json")), slurp(path("r2.json")));
    EXPECT_EQ(slurp(path("r1.json.histogram.csv")), slurp(path("r2.json.histogram.csv")));
    const auto rep = nlohmann::json::parse(slurp(path("r1.json")));
    EXPECT_EQ(rep["per_doc"].size(), 50u);
    EXPECT_EQ(rep["histogram"].size(), 20u);

    const auto pos = run_cli({"analyze-positions", "--in", path("r1.json"), "--bins", "20"});
    ASSERT_EQ(pos.code, 0) << pos.err;
    EXPECT_EQ(pos.out, slurp(path("r1.json.histogram.csv")));

    const auto blocked = run_cli(
        {"eval", "--checkpoint", path("m1.ckpt"), "--in", data, "--out", path("b.json"), "--trigram-blocking"});
    EXPECT_EQ(blocked.code, 0) << blocked.err;
}

TEST_F(CliTest, EvalSelectorsAndErrors) {
    const std::string data = labeled();
    ASSERT_EQ(run_cli({"eval", "--selector", "oracle", "--in", data, "--out", path("o.json")}).code, 0);
    ASSERT_EQ(run_cli({"eval", "--selector", "lead", "--k", "10", "--in", data, "--out", path("l.json")}).code, 0);
    const auto o = nlohmann::json::parse(slurp(path("o.json")));
    const auto l = nlohmann::json::parse(slurp(path("l.json")));
    EXPECT_GT(o["rouge2"]["f1"].get<double>(), l["rouge2"]["f1"].get<double>());

    EXPECT_EQ(run_cli({"eval", "--in", data}).code, 1);
    spit(dir / "junk.ckpt", "definitely not a checkpoint");
    EXPECT_EQ(run_cli({"eval", "--checkpoint", path("junk.ckpt"), "--in", data, "--out", path("x.json")}).code, 2);
    EXPECT_EQ(run_cli({"eval", "--selector", "oracle", "--in", kFixture, "--out", path("x.json")}).code, 1);

    spit(dir / "bad.json", "{not json");
    EXPECT_EQ(run_cli({"analyze-positions", "--in", path("bad.json")}).code, 1);
}

TEST_F(CliTest, TrainValidationErrors) {
    EXPECT_EQ(run_cli({"train", "--data", kFixture}).code, 1);  // unlabeled
    const std::string data = labeled();
    EXPECT_EQ(train(data, path("m.ckpt"), {"--lora-rank", "9"}).code, 1);
    EXPECT_EQ(train(data, path("m.ckpt"), {"--data-fraction", "0"}).code, 1);
}

TEST_F(CliTest, Gradcheck) {
    const auto r = run_cli({"gradcheck", "--out", path("g.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_TRUE(j["passed"].get<bool>());
    EXPECT_LE(j["max_rel_error"].get<double>(), 1e-4);
    EXPECT_EQ(slurp(path("g.json")), r.out);
    EXPECT_EQ(run_cli({"gradcheck", "--tolerance", "1e-30"}).code, 1);
}

TEST_F(CliTest, Sweep) {
    const std::string data = labeled();
    std::vector<std::string> args{"sweep", "--in", data, "--out", path("s.csv"), "--fractions", "0.1,1.0", "--k", "3"};
    args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(path("s.csv"));
    EXPECT_EQ(csv.rfind("fraction,train_documents,rouge2_f1\n0.1,5,", 0), 0u) << csv;
    EXPECT_NE(csv.find("\n1,50,"), std::string::npos) << csv;
}
