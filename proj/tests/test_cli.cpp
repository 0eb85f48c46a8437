#include "support.hpp"

#include "qnnrepair/cli.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace qnnrepair;
using namespace qnnrepair::testing;

namespace
{

struct Run
{
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args)
{
    args.insert(args.begin(), "qnnrepair");
    std::vector<const char *> argv;
    for (const auto &a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string fx(const std::string &name)
{
    return fixture(name).string();
}

} // namespace

TEST_CASE("quantize writes a loadable quantized model")
{
    TempDir dir("cli_quantize");
    const auto target = (dir / "q.json").string();
    const Run r = run({"quantize", "--model", fx("mlp_float.json"), "--out", target});
    CHECK(r.code == kExitOk);
    const QuantizedModel q = load_quantized_model(target);
    CHECK(q.num_layers() == 3);
    CHECK(q.layer(0).weights.has_value());
}

TEST_CASE("eval prints accuracy and fidelity")
{
    const Run r = run({"eval", "--quant", fx("mlp_quant.json"), "--data", fx("mlp_val.csv"), "--reference", fx("mlp_float.json")});
    CHECK(r.code == kExitOk);
    CHECK(r.out.rfind("dataset,n,correct,accuracy,fidelity\n", 0) == 0);
    CHECK(r.out.find(",300,") != std::string::npos);
    CHECK(run({"eval", "--data", fx("mlp_val.csv")}).code == kExitUsage);
}

TEST_CASE("localize writes one CSV row per neuron")
{
    const Run r = run({"localize", "--float", fx("mlp_float.json"), "--quant", fx("mlp_quant.json"), "--repair-set", fx("mlp_repair.csv"), "--metric", "dstar",
                       "--layer", "0"});
    REQUIRE(r.code == kExitOk);
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "neuron_index,C_af,C_nf,C_as,C_ns,dstar,rank");
    int rows = 0;
    while (std::getline(lines, line))
        rows++;
    CHECK(rows == 16);
}

TEST_CASE("repair writes a report with at most --top attempts")
{
    TempDir dir("cli_repair");
    const Run r = run({"repair", "--float", fx("mlp_float.json"), "--quant", fx("mlp_quant.json"), "--repair-set", fx("mlp_repair.csv"), "--val", fx("mlp_val.csv"),
                       "--metric", "euclid", "--top", "10", "--out", dir.path().string()});
    CHECK((r.code == kExitOk || r.code == kExitNothingSolved));
    const auto report = nlohmann::json::parse(read_bytes(dir / "report.json"));
    CHECK(report["neurons"].size() <= 10);
    CHECK(report["selection"] == "euclid");
    CHECK(std::filesystem::exists(dir / "repaired.json"));
    CHECK_NOTHROW(load_quantized_model(dir / "repaired.json"));
}

TEST_CASE("repair exits with 2 when nothing could be solved")
{
    const ContradictionCase c = contradiction_case();
    TempDir dir("cli_nothing");
    save_model(c.fmodel, dir / "f.json");
    save_quantized_model(c.qmodel, dir / "q.json");
    save_dataset(c.data, dir / "d.csv", DatasetFormat::csv);
    const auto d = (dir / "d.csv").string();
    const Run r = run({"repair", "--float", (dir / "f.json").string(), "--quant", (dir / "q.json").string(), "--repair-set", d, "--val", d, "--top", "1"});
    CHECK(r.code == kExitNothingSolved);
}

TEST_CASE("usage errors exit with 64")
{
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({"quantize", "--model", fx("mlp_float.json")}).code == kExitUsage);
    CHECK(run({"quantize", "--model", fx("does_not_exist.json"), "--out", "x.json"}).code == kExitUsage);
    CHECK(run({"localize", "--float", fx("mlp_float.json"), "--quant", fx("mlp_quant.json"), "--repair-set", fx("mlp_repair.csv"), "--metric", "gini"}).code ==
          kExitUsage);
    CHECK(run({"repair", "--float", fx("mlp_float.json"), "--quant", fx("mlp_quant.json"), "--repair-set", fx("mlp_repair.csv"), "--val", fx("mlp_val.csv"),
               "--top", "0"})
              .code == kExitUsage);
}

TEST_CASE("help exits cleanly")
{
    const Run r = run({"--help"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("repair") != std::string::npos);
}

TEST_CASE("runtime failures exit with 1")
{
    TempDir dir("cli_runtime");
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(run({"quantize", "--model", (dir / "broken.json").string(), "--out", (dir / "q.json").string()}).code == kExitRuntimeError);
    // dataset width does not match the model
    CHECK(run({"eval", "--model", fx("mlp_float.json"), "--data", fx("two_rows.csv")}).code == kExitRuntimeError);
    CHECK(run({"experiment", "--preset", "mnist-mini"}).code == kExitRuntimeError);
}
