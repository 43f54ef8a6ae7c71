#include "metrik/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "metrik/errors.hpp"

namespace metrik {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'T', 'K', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(out, bits);
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        if (pos_ + 4 > bytes_.size()) throw ConfigError("truncated checkpoint");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]);
        pos_ += 4;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    std::string blob(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw ConfigError("truncated checkpoint");
        std::string out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

json config_json(const Imputer& model) {
    json j;
    j["n_blocks"] = model.config.n_blocks;
    j["n_heads"] = model.config.n_heads;
    j["d_model"] = model.config.d_model;
    j["d_ff"] = model.config.d_ff;
    j["epochs"] = model.config.epochs;
    j["learning_rate"] = model.config.learning_rate;
    j["metric_kind"] =
        model.config.metric_kind == MetricKind::continuous ? "continuous" : "categorical";
    j["full_batch_limit"] = model.config.full_batch_limit;
    j["batch_size"] = model.config.batch_size;
    j["validate_every"] = model.config.validate_every;
    j["early_checkpointing"] = model.config.early_checkpointing;
    j["n_timepoints"] = model.n_timepoints;
    j["n_metrics"] = model.n_metrics;
    j["category_counts"] = model.category_counts;
    return j;
}

}  // namespace

std::string checkpoint_bytes(const Imputer& model) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    const std::string config = config_json(model).dump();
    put_u32(out, static_cast<std::uint32_t>(config.size()));
    out += config;
    const auto params = model.named_parameters();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(tensor->rows()));
        put_u32(out, static_cast<std::uint32_t>(tensor->cols()));
        for (std::size_t i = 0; i < tensor->size(); ++i)
            put_f32(out, static_cast<float>(tensor->data()[i]));
    }
    return out;
}

Imputer imputer_from_checkpoint_bytes(const std::string& bytes) {
    Reader r(bytes);
    if (r.blob(4) != std::string(kMagic, 4)) throw ConfigError("not a checkpoint file");
    if (r.u32() != kVersion) throw ConfigError("unsupported checkpoint version");
    json j;
    try {
        j = json::parse(r.blob(r.u32()));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("checkpoint config parse error: ") + e.what());
    }
    ImputerConfig config;
    config.n_blocks = j.at("n_blocks").get<int>();
    config.n_heads = j.at("n_heads").get<int>();
    config.d_model = j.at("d_model").get<int>();
    config.d_ff = j.at("d_ff").get<int>();
    config.epochs = j.at("epochs").get<int>();
    config.learning_rate = j.at("learning_rate").get<double>();
    config.metric_kind = j.at("metric_kind").get<std::string>() == "categorical"
                             ? MetricKind::categorical
                             : MetricKind::continuous;
    config.full_batch_limit = j.at("full_batch_limit").get<int>();
    config.batch_size = j.at("batch_size").get<int>();
    config.validate_every = j.at("validate_every").get<int>();
    config.early_checkpointing = j.at("early_checkpointing").get<bool>();

    Imputer model = make_imputer(config, j.at("n_timepoints").get<int>(),
                                 j.at("n_metrics").get<int>(),
                                 j.at("category_counts").get<std::vector<int>>(), 0);
    const std::uint32_t n_tensors = r.u32();
    auto params = model.named_parameters();
    if (n_tensors != params.size()) throw ConfigError("checkpoint tensor count mismatch");
    for (auto& [name, tensor] : params) {
        if (r.blob(r.u32()) != name) throw ConfigError("checkpoint tensor order mismatch");
        const std::uint32_t rows = r.u32(), cols = r.u32();
        if (static_cast<int>(rows) != tensor->rows() || static_cast<int>(cols) != tensor->cols())
            throw ConfigError("checkpoint tensor shape mismatch for " + name);
        for (std::size_t i = 0; i < tensor->size(); ++i)
            tensor->data()[i] = static_cast<double>(r.f32());
    }
    if (!r.done()) throw ConfigError("trailing bytes in checkpoint");
    return model;
}

void save_checkpoint(const Imputer& model, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write checkpoint: " + path.string());
    const std::string bytes = checkpoint_bytes(model);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ConfigError("checkpoint write failed: " + path.string());
}

Imputer load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return imputer_from_checkpoint_bytes(ss.str());
}

Imputer canonicalize(const Imputer& model) {
    return imputer_from_checkpoint_bytes(checkpoint_bytes(model));
}

}  // namespace metrik
