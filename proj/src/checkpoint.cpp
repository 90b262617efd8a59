#include "paraphrase/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace paraphrase {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'R', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ull;
    }
    return h;
}

template <class T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    Reader(const std::string& data, std::size_t end, const std::string& path) : data_(data), end_(end), path_(path) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > end_) throw CheckpointError(path_ + ": truncated checkpoint (needs " + std::to_string(pos_ + n) +
                                                   " bytes, payload has " + std::to_string(end_) + ")");
    }

    const std::string& data_;
    std::size_t end_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::pretrain: return "pretrain";
        case Stage::finetune: return "finetune";
        case Stage::prior: return "prior";
    }
    return "?";
}

Stage parse_stage(const std::string& text) {
    if (text == "pretrain") return Stage::pretrain;
    if (text == "finetune") return Stage::finetune;
    if (text == "prior") return Stage::prior;
    throw std::invalid_argument("unknown checkpoint stage '" + text + "'");
}

nlohmann::json to_json(const CheckpointMeta& meta) {
    return {{"kind", meta.kind},       {"stage", to_string(meta.stage)},
            {"epoch", meta.epoch},     {"validation_l2", meta.validation_l2},
            {"seed", meta.seed},       {"config", meta.config},
            {"history", meta.history}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta meta;
    meta.kind = j.at("kind").get<std::string>();
    meta.stage = parse_stage(j.at("stage").get<std::string>());
    meta.epoch = j.at("epoch").get<int>();
    meta.validation_l2 = j.at("validation_l2").get<double>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.config = j.at("config");
    meta.history = j.at("history").get<std::vector<double>>();
    return meta;
}

std::filesystem::path meta_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".json";
    return p;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    std::string blob(kMagic, sizeof(kMagic));
    put<std::uint32_t>(blob, kVersion);
    put<std::uint32_t>(blob, static_cast<std::uint32_t>(checkpoint.parameters.size()));
    for (const auto& [name, m] : checkpoint.parameters) {
        put<std::uint32_t>(blob, static_cast<std::uint32_t>(name.size()));
        blob += name;
        put<std::int32_t>(blob, m.rows);
        put<std::int32_t>(blob, m.cols);
        blob.append(reinterpret_cast<const char*>(m.data.data()), m.data.size() * sizeof(double));
    }
    put<std::uint64_t>(blob, fnv1a(blob.data(), blob.size()));
    // Metadata first: a reader that finds the parameter file also finds its sidecar.
    write_file_atomic(meta_path(path), to_json(checkpoint.meta).dump(2) + "\n");
    write_file_atomic(path, blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string name = path.string();
    const std::string blob = read_all(path);
    if (blob.size() < sizeof(kMagic) + 8 + sizeof(std::uint64_t))
        throw CheckpointError(name + ": truncated checkpoint (" + std::to_string(blob.size()) + " bytes)");
    if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) throw CheckpointError(name + ": not a checkpoint file");

    const std::size_t payload = blob.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, blob.data() + payload, sizeof(stored));

    Reader r(blob, payload, name);
    r.bytes(sizeof(kMagic));
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw CheckpointError(name + ": unsupported checkpoint version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint32_t>();
        std::string pname = r.bytes(len);
        const auto rows = r.get<std::int32_t>();
        const auto cols = r.get<std::int32_t>();
        if (rows < 0 || cols < 0) throw CheckpointError(name + ": bad shape for " + pname);
        Matrix m(rows, cols);
        const std::string raw = r.bytes(m.data.size() * sizeof(double));
        std::memcpy(m.data.data(), raw.data(), raw.size());
        ck.parameters.emplace(std::move(pname), std::move(m));
    }
    if (r.position() != payload)
        throw CheckpointError(name + ": " + std::to_string(payload - r.position()) + " trailing bytes after parameters");
    const std::uint64_t actual = fnv1a(blob.data(), payload);
    if (actual != stored) throw CheckpointError(name + ": checksum mismatch (file is corrupted)");

    const auto mpath = meta_path(path);
    if (!std::filesystem::exists(mpath)) throw CheckpointError(name + ": metadata file " + mpath.string() + " missing");
    try {
        ck.meta = meta_from_json(nlohmann::json::parse(read_all(mpath)));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(mpath.string() + ": invalid metadata: " + e.what());
    }
    return ck;
}

}  // namespace paraphrase
