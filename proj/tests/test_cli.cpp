#include <doctest.h>
#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "y12/data.hpp"
#include "y12/model.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("y12_cli_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct RunResult {
    int exit_code = -1;
    std::string out, err;
};

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Runs the tool through the shell; `env` is a prefix like "KEY=value".
RunResult run_tool(const std::string& args, const std::string& env = "") {
    TempDir cap;
    const std::string out_path = cap / "out", err_path = cap / "err";
    std::string cmd = env.empty() ? "" : env + " ";
    cmd += std::string(Y12_TOOL_PATH) + " " + args + " >" + out_path + " 2>" + err_path;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& body) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(body);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    f << body;
}

const std::string kToyConfig =
    "variant = n\nnum_classes = 3\ninput_size = 64\narea_count = 4\nseed = 5\n";

}  // namespace

TEST_CASE("describe emits four variants with strictly increasing totals") {
    auto r = run_tool("describe");
    REQUIRE(r.exit_code == 0);
    auto rows = parse_csv(r.out);
    REQUIRE(rows.size() > 1);
    CHECK(rows[0] == std::vector<std::string>{"variant", "module", "params", "flops"});

    std::vector<std::pair<uint64_t, uint64_t>> totals;
    std::vector<std::string> order;
    for (size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 4);
        if (rows[i][1] == "total") {
            order.push_back(rows[i][0]);
            totals.emplace_back(std::stoull(rows[i][2]), std::stoull(rows[i][3]));
        }
    }
    CHECK(order == std::vector<std::string>{"n", "s", "m", "x"});
    REQUIRE(totals.size() == 4);
    for (size_t i = 1; i < 4; ++i) {
        CHECK(totals[i].first > totals[i - 1].first);
        CHECK(totals[i].second > totals[i - 1].second);
    }

    // The module rows of each variant sum to its total.
    std::map<std::string, std::pair<uint64_t, uint64_t>> sums;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i][1] == "total") continue;
        sums[rows[i][0]].first += std::stoull(rows[i][2]);
        sums[rows[i][0]].second += std::stoull(rows[i][3]);
    }
    for (size_t i = 0; i < 4; ++i) {
        CHECK(sums[order[i]].first == totals[i].first);
        CHECK(sums[order[i]].second == totals[i].second);
    }
}

TEST_CASE("describe json output is one parseable document") {
    auto r = run_tool("describe --format json");
    REQUIRE(r.exit_code == 0);
    const json doc = json::parse(r.out);
    REQUIRE(doc["variants"].size() == 4);
    uint64_t prev = 0;
    for (const auto& v : doc["variants"]) {
        const auto p = v["params_total"].get<uint64_t>();
        CHECK(p > prev);
        prev = p;
        CHECK(v["modules"].size() > 5);
    }
}

TEST_CASE("describe rejects bad configs with the right exit codes") {
    TempDir tmp;
    write_text(tmp / "bad.txt", "variant = q\n");
    auto r = run_tool("describe --config " + (tmp / "bad.txt"));
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("variant") != std::string::npos);

    auto missing = run_tool("describe --config " + (tmp / "nope.txt"));
    CHECK(missing.exit_code == 3);

    write_text(tmp / "junk.txt", "frequency = 9\n");
    CHECK(run_tool("describe --config " + (tmp / "junk.txt")).exit_code == 2);
}

TEST_CASE("bench-attn reports exact costs and sane gated timings") {
    TempDir tmp;
    const std::string out = tmp / "bench.csv";
    auto r = run_tool("bench-attn --n 64,128 --d 8 --L 4 --tiles 16x16 --out " + out);
    REQUIRE(r.exit_code == 0);
    auto rows = parse_csv(slurp(out));
    REQUIRE(rows.size() == 1 + 2 * 3);  // header + two configs x three kernels

    std::map<std::string, std::map<int, std::vector<uint64_t>>> by_kernel;  // name -> n -> row
    for (size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 12);
        const int n = std::stoi(rows[i][1]);
        std::vector<uint64_t> vals;
        for (size_t c = 6; c < 8; ++c) vals.push_back(std::stoull(rows[i][c]));
        by_kernel[rows[i][0]][n] = vals;
        const double p10 = std::stod(rows[i][9]), med = std::stod(rows[i][8]),
                     p90 = std::stod(rows[i][10]);
        CHECK(p10 > 0);
        CHECK(p10 <= med);
        CHECK(med <= p90);
        CHECK(rows[i][11] == "1");
    }
    for (const int n : {64, 128}) {
        const uint64_t nn = static_cast<uint64_t>(n);
        // full attention costs 4*n^2*d; four areas cut it exactly fourfold
        CHECK(by_kernel["naive"][n][0] == 4 * nn * nn * 8);
        CHECK(by_kernel["area"][n][0] == by_kernel["naive"][n][0] / 4);
        CHECK(by_kernel["tiled"][n][0] == by_kernel["naive"][n][0]);
        // the materializing kernel leases the full score matrix
        CHECK(by_kernel["naive"][n][1] == nn * nn);
        // streaming scratch is tile-bound: Br*Bc + 3*Br + Br*d
        CHECK(by_kernel["tiled"][n][1] == 16 * 16 + 3 * 16 + 16 * 8);
    }
    CHECK(by_kernel["tiled"][64][1] == by_kernel["tiled"][128][1]);
}

TEST_CASE("bench-attn json parses and svg renders") {
    TempDir tmp;
    const std::string out = tmp / "bench.json", svg = tmp / "bench.svg";
    auto r = run_tool("bench-attn --n 64 --d 8 --L 2 --tiles 32x32 --format json --out " + out +
                      " --svg " + svg);
    REQUIRE(r.exit_code == 0);
    const json doc = json::parse(slurp(out));
    REQUIRE(doc["records"].size() == 3);
    for (const auto& rec : doc["records"]) {
        CHECK(rec["n"] == 64);
        CHECK(rec["wall_ns_median"].get<double>() > 0);
    }
    const std::string body = slurp(svg);
    CHECK(body.find("<svg") != std::string::npos);
    CHECK(body.find("tiled") != std::string::npos);
}

TEST_CASE("bench-attn rejects bad sweeps and protocols") {
    CHECK(run_tool("bench-attn --n 30 --L 4").exit_code == 2);
    CHECK(run_tool("bench-attn --n 64 --d 8 --tiles notatile").exit_code == 2);
    CHECK(run_tool("bench-attn --n 64 --d 8 --reps 5").exit_code == 2);
    CHECK(run_tool("bench-attn --n 64 --d 8 --threads 4").exit_code == 2);
    CHECK(run_tool("bench-attn --format xml").exit_code == 2);
}

TEST_CASE("a corrupted kernel fails verification and leaves no report") {
    TempDir tmp;
    const std::string out = tmp / "bench.csv";
    auto r = run_tool("bench-attn --n 64 --d 8 --L 4 --out " + out, "Y12_BENCH_CORRUPT=1");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("verification failed") != std::string::npos);
    CHECK(!fs::exists(out));
}

TEST_CASE("gradcheck passes, reproduces its table, and writes json") {
    TempDir tmp;
    const std::string out = tmp / "grad.json";
    auto a = run_tool("gradcheck --seed 1 --out " + out);
    REQUIRE(a.exit_code == 0);
    auto b = run_tool("gradcheck --seed 1");
    CHECK(a.out == b.out);
    CHECK(a.out.find("FAIL") == std::string::npos);

    const json doc = json::parse(slurp(out));
    CHECK(doc["tolerance"].get<double>() == 1e-4);
    REQUIRE(doc["entries"].size() >= 25);
    for (const auto& e : doc["entries"]) {
        CHECK(e["pass"].get<bool>());
        CHECK(e["max_rel_err"].get<double>() <= 1e-4);
    }

    auto c = run_tool("gradcheck --seed 2");
    CHECK(c.exit_code == 0);
    CHECK(c.out != a.out);  // the error column moves with the seed
}

TEST_CASE("gradcheck names a sabotaged block and exits nonzero") {
    auto r = run_tool("gradcheck --seed 1", "Y12_GRADCHECK_SABOTAGE=attn_block");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("attn_block") != std::string::npos);
    CHECK(r.out.find("FAIL") != std::string::npos);
}

TEST_CASE("train writes per-epoch checkpoints and a metrics log eval can score") {
    TempDir tmp;
    const std::string train_dir = tmp / "train", val_dir = tmp / "val", run = tmp / "run";
    y12::data::save_dataset(train_dir, y12::data::synth_dataset(12, 64, 31));
    y12::data::save_dataset(val_dir, y12::data::synth_dataset(100, 64, 32));
    write_text(tmp / "cfg.txt", kToyConfig);

    auto t = run_tool("train --config " + (tmp / "cfg.txt") + " --data " + train_dir + " --out " +
                      run + " --epochs 2 --batch 4 --warmup 2 --seed 1");
    REQUIRE(t.exit_code == 0);
    CHECK(fs::exists(run + "/epoch_000.ckpt"));
    CHECK(fs::exists(run + "/epoch_001.ckpt"));
    CHECK(fs::exists(run + "/model.ckpt"));

    std::istringstream metrics(slurp(run + "/metrics.ndjson"));
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) {
        const json m = json::parse(line);
        CHECK(m["epoch"].get<int>() == lines);
        CHECK(std::isfinite(m["loss"].get<double>()));
        CHECK(m["lr"].get<double>() > 0);
        ++lines;
    }
    CHECK(lines == 2);

    const std::string report = tmp / "eval.json", svg = tmp / "eval.svg";
    auto e = run_tool("eval --data " + val_dir + " --ckpt " + run + "/model.ckpt --out " + report +
                      " --svg " + svg);
    REQUIRE(e.exit_code == 0);
    const json doc = json::parse(slurp(report));
    REQUIRE(doc["results"].size() == 1);
    const auto& res = doc["results"][0];
    CHECK(res["variant"] == "n");
    CHECK(res["images"] == 100);
    CHECK(res["map50"].get<double>() >= 0.0);
    CHECK(res["map50"].get<double>() <= 1.0);
    CHECK(res["per_class_ap50"].size() == 3);
    CHECK(res["per_class_ap50_95"].size() == 3);
    const auto& lat = res["latency_ns"];
    CHECK(lat["samples"] == 100);
    CHECK(lat["p10"].get<double>() > 0);
    CHECK(lat["p10"].get<double>() <= lat["median"].get<double>());
    CHECK(lat["median"].get<double>() <= lat["p90"].get<double>());
    CHECK(slurp(svg).find("<svg") != std::string::npos);

    // A config whose shapes disagree with the checkpoint is a usage error.
    write_text(tmp / "cfg_s.txt", "variant = s\nnum_classes = 3\ninput_size = 64\n");
    auto bad = run_tool("eval --data " + val_dir + " --ckpt " + run + "/model.ckpt --config " +
                        (tmp / "cfg_s.txt"));
    CHECK(bad.exit_code == 2);

    // A matching config loads cleanly.
    auto ok = run_tool("eval --data " + val_dir + " --ckpt " + run + "/model.ckpt --config " +
                       (tmp / "cfg.txt"));
    CHECK(ok.exit_code == 0);
}

TEST_CASE("a malformed dataset file is an io failure naming the file") {
    TempDir tmp;
    const std::string dir = tmp / "ds";
    fs::create_directories(dir);
    write_text(dir + "/000000.ppm", "P5 not a color image");
    write_text(dir + "/000000.txt", "0 0.5 0.5 0.2 0.2\n");
    write_text(tmp / "cfg.txt", kToyConfig);

    auto t = run_tool("train --config " + (tmp / "cfg.txt") + " --data " + dir + " --out " +
                      (tmp / "run"));
    CHECK(t.exit_code == 3);
    CHECK(t.err.find("000000.ppm") != std::string::npos);
}
