#include "digan/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <vector>

#include "digan/io_util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace digan {

namespace {

using json = nlohmann::json;

struct BlobEntry {
    std::string name;
    Shape shape;
    const Eigen::VectorXd* data;
};

char hex_digit(unsigned v) { return v < 10 ? static_cast<char>('0' + v) : static_cast<char>('a' + v - 10); }

std::string to_hex(std::uint64_t v) {
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = hex_digit(static_cast<unsigned>(v & 0xf));
        v >>= 4;
    }
    return s;
}

json layer_list(const std::vector<BlobEntry>& entries) {
    json layers = json::array();
    for (const BlobEntry& e : entries) {
        json layer;
        layer["name"] = e.name;
        layer["shape"] = std::vector<long>(e.shape.begin(), e.shape.end());
        layers.push_back(std::move(layer));
    }
    return layers;
}

void write_blob(const std::filesystem::path& path, const std::vector<BlobEntry>& entries,
                json& manifest) {
    std::string bytes;
    for (const BlobEntry& e : entries) {
        const auto n = static_cast<std::size_t>(e.data->size()) * sizeof(double);
        const auto old = bytes.size();
        bytes.resize(old + n);
        std::memcpy(bytes.data() + old, e.data->data(), n);
    }
    manifest["blob"]["bytes"] = bytes.size();
    manifest["blob"]["fnv1a64"] = to_hex(fnv1a64(bytes.data(), bytes.size()));
    write_file_atomic(path, bytes);
}

// Reads the blob, verifies length and checksum, and copies each layer into
// the matching destination tensor.
void read_blob(const std::filesystem::path& path, const json& manifest,
               const std::vector<std::string>& expected_names,
               const std::vector<Eigen::VectorXd*>& destinations) {
    const std::string bytes = read_file(path);
    const auto expected_bytes = manifest.at("blob").at("bytes").get<std::size_t>();
    if (bytes.size() != expected_bytes) {
        throw IntegrityError("checkpoint blob " + path.string() + " has " +
                             std::to_string(bytes.size()) + " bytes, manifest says " +
                             std::to_string(expected_bytes));
    }
    const std::string checksum = to_hex(fnv1a64(bytes.data(), bytes.size()));
    if (checksum != manifest.at("blob").at("fnv1a64").get<std::string>()) {
        throw IntegrityError("checkpoint blob " + path.string() + " failed its checksum");
    }
    const json& layers = manifest.at("layers");
    if (layers.size() != expected_names.size()) {
        throw IntegrityError("checkpoint manifest lists " + std::to_string(layers.size()) +
                             " layers, expected " + std::to_string(expected_names.size()));
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < expected_names.size(); ++i) {
        const std::string name = layers[i].at("name").get<std::string>();
        if (name != expected_names[i]) {
            throw IntegrityError("checkpoint layer " + std::to_string(i) + " is '" + name +
                                 "', expected '" + expected_names[i] + "'");
        }
        Eigen::VectorXd* dst = destinations[i];
        const auto n = static_cast<std::size_t>(dst->size()) * sizeof(double);
        if (offset + n > bytes.size()) {
            throw IntegrityError("checkpoint blob too short for layer '" + name + "'");
        }
        std::memcpy(dst->data(), bytes.data() + offset, n);
        offset += n;
    }
    if (offset != bytes.size()) {
        throw IntegrityError("checkpoint blob has trailing bytes");
    }
}

json parse_manifest(const std::filesystem::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw IntegrityError("bad checkpoint manifest " + path.string() + ": " + e.what());
    }
}

} // namespace

std::uint64_t fnv1a64(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t hash = 14695981039346656037ull;
    for (std::size_t i = 0; i < bytes; ++i) {
        hash ^= p[i];
        hash *= 1099511628211ull;
    }
    return hash;
}

void save_denoiser(const std::filesystem::path& dir, const Denoiser& denoiser, int T,
                   double beta_start, double beta_end, std::uint64_t seed) {
    const DenoiserConfig& cfg = denoiser.config();
    json manifest;
    manifest["kind"] = "denoiser";
    manifest["p"] = cfg.p;
    manifest["hidden"] = std::vector<long>(cfg.hidden.begin(), cfg.hidden.end());
    manifest["time_dim"] = cfg.time_dim;
    manifest["cond_dim"] = cfg.cond_dim;
    manifest["n_classes"] = cfg.n_classes;
    manifest["max_visits"] = cfg.max_visits;
    manifest["schedule"] = {{"T", T}, {"beta_start", beta_start}, {"beta_end", beta_end}};
    manifest["seed"] = seed;
    manifest["loss_trace"] = denoiser.loss_trace;

    std::vector<BlobEntry> entries;
    const auto names = denoiser.parameter_names();
    const auto& params = denoiser.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        entries.push_back({names[i], params[i].shape(), &params[i].data()});
    }
    manifest["layers"] = layer_list(entries);
    write_blob(dir / "denoiser.bin", entries, manifest);
    write_file_atomic(dir / "denoiser.json", manifest.dump(2) + "\n");
}

DenoiserCheckpoint load_denoiser(const std::filesystem::path& dir) {
    const json manifest = parse_manifest(dir / "denoiser.json");
    DenoiserCheckpoint out;
    try {
        DenoiserConfig cfg;
        cfg.p = manifest.at("p").get<Eigen::Index>();
        const auto hidden = manifest.at("hidden").get<std::vector<long>>();
        cfg.hidden.assign(hidden.begin(), hidden.end());
        cfg.time_dim = manifest.at("time_dim").get<Eigen::Index>();
        cfg.cond_dim = manifest.at("cond_dim").get<Eigen::Index>();
        cfg.n_classes = manifest.at("n_classes").get<Eigen::Index>();
        cfg.max_visits = manifest.at("max_visits").get<Eigen::Index>();
        out.beta_start = manifest.at("schedule").at("beta_start").get<double>();
        out.beta_end = manifest.at("schedule").at("beta_end").get<double>();
        out.schedule =
            make_schedule(manifest.at("schedule").at("T").get<int>(), out.beta_start, out.beta_end);
        out.seed = manifest.at("seed").get<std::uint64_t>();
        out.denoiser = Denoiser(cfg, Rng(0));
        out.denoiser.loss_trace = manifest.at("loss_trace").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("bad denoiser manifest: ") + e.what());
    }

    std::vector<std::string> names = out.denoiser.parameter_names();
    std::vector<Eigen::VectorXd*> dsts;
    for (Tensor& p : out.denoiser.parameters()) dsts.push_back(&p.mutable_data());
    read_blob(dir / "denoiser.bin", manifest, names, dsts);
    return out;
}

void save_sacnet(const std::filesystem::path& dir, SacNetwork& network,
                 const std::vector<double>& loss_trace, std::uint64_t seed) {
    const SacNetworkConfig& cfg = network.config();
    json manifest;
    manifest["kind"] = "sacnet";
    manifest["window_length"] = cfg.window_length;
    manifest["p"] = cfg.p;
    manifest["channels"] = std::vector<long>(cfg.channels.begin(), cfg.channels.end());
    manifest["attn_dim"] = cfg.attn_dim;
    manifest["kernel"] = {cfg.kernel_h, cfg.kernel_w};
    manifest["bn_eps"] = cfg.bn_eps;
    manifest["seed"] = seed;
    manifest["loss_trace"] = loss_trace;

    std::vector<BlobEntry> entries;
    const auto names = network.parameter_names();
    auto params = network.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        entries.push_back({names[i], params[i].shape(), &params[i].data()});
    }
    // running statistics ride along after the trainable parameters
    for (std::size_t j = 0; j < network.units().size(); ++j) {
        SacUnit& unit = network.units()[j];
        const std::string prefix = "unit" + std::to_string(j) + ".";
        entries.push_back({prefix + "bn_running_mean",
                           {unit.bn_stats.mean.size()},
                           &unit.bn_stats.mean});
        entries.push_back(
            {prefix + "bn_running_var", {unit.bn_stats.var.size()}, &unit.bn_stats.var});
    }
    manifest["layers"] = layer_list(entries);
    write_blob(dir / "classifier.bin", entries, manifest);
    write_file_atomic(dir / "classifier.json", manifest.dump(2) + "\n");
}

SacNetCheckpoint load_sacnet(const std::filesystem::path& dir) {
    const json manifest = parse_manifest(dir / "classifier.json");
    SacNetCheckpoint out;
    try {
        SacNetworkConfig cfg;
        cfg.window_length = manifest.at("window_length").get<Eigen::Index>();
        cfg.p = manifest.at("p").get<Eigen::Index>();
        const auto channels = manifest.at("channels").get<std::vector<long>>();
        cfg.channels.assign(channels.begin(), channels.end());
        cfg.attn_dim = manifest.at("attn_dim").get<Eigen::Index>();
        cfg.kernel_h = manifest.at("kernel").at(0).get<Eigen::Index>();
        cfg.kernel_w = manifest.at("kernel").at(1).get<Eigen::Index>();
        cfg.bn_eps = manifest.at("bn_eps").get<double>();
        out.seed = manifest.at("seed").get<std::uint64_t>();
        out.loss_trace = manifest.at("loss_trace").get<std::vector<double>>();
        out.network = SacNetwork(cfg, Rng(0));
    } catch (const json::exception& e) {
        throw IntegrityError(std::string("bad classifier manifest: ") + e.what());
    }

    std::vector<std::string> names = out.network.parameter_names();
    std::vector<Eigen::VectorXd*> dsts;
    auto params = out.network.parameters();
    for (Tensor& p : params) dsts.push_back(&p.mutable_data());
    for (std::size_t j = 0; j < out.network.units().size(); ++j) {
        SacUnit& unit = out.network.units()[j];
        const std::string prefix = "unit" + std::to_string(j) + ".";
        names.push_back(prefix + "bn_running_mean");
        dsts.push_back(&unit.bn_stats.mean);
        names.push_back(prefix + "bn_running_var");
        dsts.push_back(&unit.bn_stats.var);
    }
    read_blob(dir / "classifier.bin", manifest, names, dsts);
    return out;
}

void save_normalizer(const std::filesystem::path& path, const Normalizer& normalizer) {
    json obj;
    obj["mean"] = std::vector<double>(normalizer.mean().data(),
                                      normalizer.mean().data() + normalizer.mean().size());
    obj["std"] = std::vector<double>(normalizer.std().data(),
                                     normalizer.std().data() + normalizer.std().size());
    write_file_atomic(path, obj.dump(2) + "\n");
}

Normalizer load_normalizer(const std::filesystem::path& path) {
    json obj;
    try {
        obj = json::parse(read_file(path));
        const auto mean = obj.at("mean").get<std::vector<double>>();
        const auto std_vec = obj.at("std").get<std::vector<double>>();
        return Normalizer::from_moments(
            Eigen::Map<const Eigen::VectorXd>(mean.data(),
                                              static_cast<Eigen::Index>(mean.size())),
            Eigen::Map<const Eigen::VectorXd>(std_vec.data(),
                                              static_cast<Eigen::Index>(std_vec.size())));
    } catch (const json::exception& e) {
        throw IntegrityError("bad normalizer file " + path.string() + ": " + e.what());
    }
}

} // namespace digan
