#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#ifndef ICCR_CLI_PATH
#error "ICCR_CLI_PATH must point at the built binary"
#endif

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(ICCR_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    CliResult result;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) {
        result.output += buf.data();
    }
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("iccr_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string sub(const char* name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("selftest wires the acceptance oracles and exits zero") {
    const CliResult r = run_cli("selftest");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("selftest ok") != std::string::npos);
}

TEST_CASE("gen-data header carries the requested count and config") {
    TempDir tmp;
    const CliResult r = run_cli("gen-data --task counterfactual --count 17 --seed 7 --run-dir " + tmp.sub("g"));
    CHECK(r.exit_code == 0);
    std::ifstream in(tmp.path / "g/dataset/prompts.jsonl");
    std::string line;
    REQUIRE(std::getline(in, line));
    const json header = json::parse(line);
    CHECK(header.at("count").get<int>() == 17);
    CHECK(header.at("format").get<std::string>() == "iccr-dataset");
    CHECK(header.at("config").at("seed").get<int>() == 7);
    int records = 0;
    while (std::getline(in, line)) ++records;
    CHECK(records == 17);

    const json manifest = json::parse(slurp(tmp.path / "g/manifest.json"));
    CHECK(manifest.at("ok").get<bool>());
    CHECK(manifest.at("artifacts").size() == 1);
}

TEST_CASE("the default dataset size matches the evaluation protocol") {
    TempDir tmp;
    const CliResult r = run_cli("gen-data --seed 7 --n-max 4 --run-dir " + tmp.sub("d"));
    CHECK(r.exit_code == 0);
    std::ifstream in(tmp.path / "d/dataset/prompts.jsonl");
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(json::parse(line).at("count").get<int>() == 6400);
}

TEST_CASE("eval over a length range emits one row per length") {
    TempDir tmp;
    const CliResult r = run_cli("eval --predictor zero --lengths 2..50 --seqs 8 --resamples 50 --run-dir " + tmp.sub("e"));
    CHECK(r.exit_code == 0);
    std::ifstream in(tmp.path / "e/metrics/eval_curve.csv");
    std::string line;
    int rows = -1;  // header
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 49);
}

TEST_CASE("identical seeds give byte-identical metric files") {
    TempDir tmp;
    const std::string args = "eval --predictor ols --lengths 5,9 --seqs 64 --eval-seed 123 --run-dir ";
    CHECK(run_cli(args + tmp.sub("a")).exit_code == 0);
    CHECK(run_cli(args + tmp.sub("b")).exit_code == 0);
    CHECK(slurp(tmp.path / "a/metrics/eval_curve.csv") == slurp(tmp.path / "b/metrics/eval_curve.csv"));
    CHECK(slurp(tmp.path / "a/metrics/eval_curve.json") == slurp(tmp.path / "b/metrics/eval_curve.json"));
}

TEST_CASE("config file: defaults, overrides, and unknown keys") {
    TempDir tmp;
    // empty config file leaves the documented defaults in place
    {
        std::ofstream(tmp.path / "empty.ini") << "";
        const CliResult r = run_cli("train --print-config --config " + tmp.sub("empty.ini"));
        CHECK(r.exit_code == 0);
        const json cfg = json::parse(r.output);
        CHECK(cfg.at("train").at("steps").get<int>() == 50000);
        CHECK(cfg.at("train").at("batch").get<int>() == 64);
        CHECK(cfg.at("train").at("lr").get<double>() == doctest::Approx(1e-4));
        CHECK(cfg.at("gen").at("n_min").get<int>() == 2);
        CHECK(cfg.at("gen").at("n_max").get<int>() == 50);
    }
    // config value applies; an explicit flag wins over the file
    {
        std::ofstream(tmp.path / "lr.ini") << "[train]\nlr=0.002\nsteps=11\n";
        const CliResult file_only = run_cli("train --print-config --config " + tmp.sub("lr.ini"));
        CHECK(file_only.exit_code == 0);
        const json cfg = json::parse(file_only.output);
        CHECK(cfg.at("train").at("lr").get<double>() == doctest::Approx(2e-3));
        CHECK(cfg.at("train").at("steps").get<int>() == 11);

        const CliResult flag_wins =
            run_cli("train --print-config --lr 0.005 --config " + tmp.sub("lr.ini"));
        CHECK(flag_wins.exit_code == 0);
        CHECK(json::parse(flag_wins.output).at("train").at("lr").get<double>() == doctest::Approx(5e-3));
    }
    // a typo in the config file is rejected by name
    {
        std::ofstream(tmp.path / "typo.ini") << "laerning_rate=0.01\n";
        const CliResult r = run_cli("train --print-config --config " + tmp.sub("typo.ini"));
        CHECK(r.exit_code == 2);
        CHECK(r.output.find("laerning_rate") != std::string::npos);
    }
}

TEST_CASE("unknown flags are usage errors") {
    const CliResult r = run_cli("eval --predictor zero --lengths 2,3 --seqs 4 --no-such-flag");
    CHECK(r.exit_code == 2);
}

TEST_CASE("runtime failures still write a manifest") {
    TempDir tmp;
    const CliResult r = run_cli("probe --checkpoint /nonexistent.ickp --run-dir " + tmp.sub("p"));
    CHECK(r.exit_code == 1);
    const json manifest = json::parse(slurp(tmp.path / "p/manifest.json"));
    CHECK(!manifest.at("ok").get<bool>());
    CHECK(manifest.at("error").get<std::string>().find("nonexistent") != std::string::npos);
}

TEST_CASE("train, resume, eval, probe, and attn all run end to end at toy scale") {
    TempDir tmp;
    const std::string base_args =
        "train --layers 1 --heads 1 --hidden 8 --max-context 22 --n-min 2 --n-max 10 "
        "--batch 4 --lr 0.001 --checkpoint-every 2 --eval-every 2 --eval-sequences 4 "
        "--seed 5 --data-seed 3 --detect-transition";
    const CliResult t = run_cli(base_args + " --steps 4 --run-dir " + tmp.sub("t"));
    CHECK(t.exit_code == 0);
    CHECK(fs::exists(tmp.path / "t/checkpoints/final.ickp"));
    CHECK(fs::exists(tmp.path / "t/metrics/loss_trace.csv"));
    CHECK(fs::exists(tmp.path / "t/metrics/eval_snapshots.csv"));
    CHECK(fs::exists(tmp.path / "t/metrics/phase_transition.json"));
    CHECK(fs::exists(tmp.path / "t/timing.csv"));

    const CliResult resumed = run_cli(base_args + " --steps 6 --resume " + tmp.sub("t") +
                                      "/checkpoints/final.ickp --run-dir " + tmp.sub("t2"));
    CHECK(resumed.exit_code == 0);

    const CliResult e = run_cli("eval --checkpoint " + tmp.sub("t") +
                                "/checkpoints/final.ickp --lengths 2,5 --seqs 16 --resamples 50 "
                                "--run-dir " + tmp.sub("ev"));
    CHECK(e.exit_code == 0);
    CHECK(fs::exists(tmp.path / "ev/metrics/eval_curve.csv"));

    const CliResult p = run_cli("probe --checkpoint " + tmp.sub("t") +
                                "/checkpoints/final.ickp --train-n 32 --eval-n 24 --run-dir " +
                                tmp.sub("pr"));
    CHECK(p.exit_code == 0);
    CHECK(fs::exists(tmp.path / "pr/metrics/probe.csv"));

    const CliResult a = run_cli("attn --checkpoint " + tmp.sub("t") +
                                "/checkpoints/final.ickp --z 2,3 --batches 1 --seqs-per-batch 4 "
                                "--pairs 5 --run-dir " + tmp.sub("at"));
    CHECK(a.exit_code == 0);
    CHECK(fs::exists(tmp.path / "at/metrics/attention.csv"));
}

TEST_CASE("sde-sim writes trajectory prompts") {
    TempDir tmp;
    const CliResult r = run_cli("sde-sim --count 3 --n-events 4 --seed 9 --run-dir " + tmp.sub("s"));
    CHECK(r.exit_code == 0);
    std::ifstream in(tmp.path / "s/dataset/sde.jsonl");
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(json::parse(line).at("format").get<std::string>() == "iccr-sde");
    int records = 0;
    while (std::getline(in, line)) ++records;
    CHECK(records == 3);
}

TEST_CASE("report lists the reproduction commands") {
    const CliResult r = run_cli("report --json");
    CHECK(r.exit_code == 0);
    const json table = json::parse(r.output);
    CHECK(table.size() >= 8);
    bool has_probe = false;
    for (const auto& row : table) {
        has_probe = has_probe || row.at("command").get<std::string>().find("probe") != std::string::npos;
    }
    CHECK(has_probe);
}
