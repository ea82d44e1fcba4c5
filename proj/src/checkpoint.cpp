#include "strkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "strkit/errors.hpp"
#include "strkit/hash.hpp"
#include "strkit/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace strkit::ckpt {

namespace {

// Arrays are stored little-endian; on a big-endian host the bytes would
// need swapping, which this toolkit does not implement.
static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
                {"seed", c.seed}};
}

} // namespace

void write_dir(const std::string& dir, json extra, const std::vector<ArrayRef>& arrays) {
    fs::create_directories(dir);
    const std::string bin_path = (fs::path(dir) / "arrays.bin").string();
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw data_error("cannot write " + bin_path);

    ContentHash blob_hash;
    json index = json::array();
    size_t offset = 0;
    for (const auto& a : arrays) {
        size_t expect = 1;
        for (size_t s : a.shape) expect *= s;
        if (expect != a.count)
            throw data_error("array '" + a.name + "' shape does not match its element count");
        bin.write(reinterpret_cast<const char*>(a.data),
                  std::streamsize(a.count * sizeof(float)));
        blob_hash.update(a.data, a.count * sizeof(float));
        index.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                         {"count", a.count}});
        offset += a.count * sizeof(float);
    }
    bin.close();

    extra["format"] = "float32-le";
    extra["code_version"] = kVersion;
    extra["arrays"] = index;
    extra["arrays_checksum"] = blob_hash.hex();

    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ofstream mf(manifest_path);
    if (!mf) throw data_error("cannot write " + manifest_path);
    mf << extra.dump(2) << "\n";
}

Loaded read_dir(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream mf(manifest_path);
    if (!mf) throw data_error("checkpoint manifest missing: " + manifest_path);
    Loaded out;
    try {
        mf >> out.manifest;
    } catch (const json::exception& e) {
        throw data_error("corrupt checkpoint manifest " + manifest_path + ": " + e.what());
    }

    const std::string bin_path = (fs::path(dir) / "arrays.bin").string();
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw data_error("checkpoint arrays missing: " + bin_path);
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)),
                           std::istreambuf_iterator<char>());

    if (!out.manifest.contains("arrays") || !out.manifest.contains("arrays_checksum"))
        throw data_error("corrupt checkpoint manifest " + manifest_path +
                         ": missing array index");
    const std::string want = out.manifest["arrays_checksum"].get<std::string>();
    const std::string got = hash_hex(fnv1a64(blob.data(), blob.size()));
    if (want != got)
        throw data_error("checkpoint integrity failure in " + dir + ": arrays checksum " + got +
                         " does not match manifest " + want);

    for (const auto& e : out.manifest["arrays"]) {
        LoadedArray a;
        a.shape = e.at("shape").get<std::vector<size_t>>();
        const size_t offset = e.at("offset").get<size_t>();
        const size_t count = e.at("count").get<size_t>();
        size_t expect = 1;
        for (size_t s : a.shape) expect *= s;
        if (expect != count || offset + count * sizeof(float) > blob.size())
            throw data_error("checkpoint integrity failure in " + dir +
                             ": bad index entry for '" + e.at("name").get<std::string>() + "'");
        a.data.resize(count);
        std::memcpy(a.data.data(), blob.data() + offset, count * sizeof(float));
        out.arrays.emplace(e.at("name").get<std::string>(), std::move(a));
    }
    return out;
}

void save_model(const std::string& dir, const Parameters<float>& params, int64_t step) {
    std::vector<ArrayRef> arrays;
    params.for_each_array([&](const std::string& name, const Mat<float>& m) {
        arrays.push_back({name, {m.rows, m.cols}, m.a.data(), m.count()});
    });
    json extra;
    extra["kind"] = "model";
    extra["config"] = config_to_json(params.config);
    extra["seed"] = params.config.seed;
    extra["step"] = step;
    extra["params_checksum"] = hash_hex(params.checksum());
    write_dir(dir, std::move(extra), arrays);
}

Parameters<float> load_model(const std::string& dir) {
    auto loaded = read_dir(dir);
    if (loaded.manifest.value("kind", "") != "model")
        throw data_error("checkpoint at " + dir + " is not a model checkpoint");
    ModelConfig cfg;
    try {
        cfg = config_from_json(loaded.manifest.at("config"));
    } catch (const json::exception& e) {
        throw data_error("corrupt model manifest in " + dir + ": " + e.what());
    }
    auto params = init_params<float>(cfg);
    params.for_each_array([&](const std::string& name, Mat<float>& m) {
        const auto it = loaded.arrays.find(name);
        if (it == loaded.arrays.end())
            throw data_error("model checkpoint " + dir + " lacks array '" + name + "'");
        const auto& a = it->second;
        if (a.shape != std::vector<size_t>{m.rows, m.cols})
            throw data_error("model checkpoint " + dir + " array '" + name +
                             "' shape mismatch against config");
        m.a = a.data;
    });
    return params;
}

std::string checksum_hex(const Parameters<float>& params) { return hash_hex(params.checksum()); }

} // namespace strkit::ckpt
