#include "availnet/container.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <zlib.h>

#include "availnet/error.hpp"
#include "json_util.hpp"

namespace availnet {

using nlohmann::json;
using detail::number_to_json;
using detail::ObjectReader;

const char* artifact_name(ArtifactType type) {
    switch (type) {
        case ArtifactType::cluster: return "cluster";
        case ArtifactType::stage1: return "stage1";
        case ArtifactType::stage2: return "stage2";
    }
    return "unknown";
}

namespace {

constexpr char kMagic[4] = {'A', 'V', 'M', 'C'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str32(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::string& buffer() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    std::string_view take(std::size_t n) {
        if (n > in_.size() - pos_) throw CorruptionError("model container is truncated");
        const auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        const auto s = take(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
        return v;
    }
    std::uint64_t u64() {
        const auto s = take(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str32() {
        const auto n = u32();
        return std::string(take(n));
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    std::string_view in_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), n);
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("failed reading " + path);
    return std::move(ss).str();
}

}  // namespace

std::string serialize_container(const ModelContainer& c) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kContainerVersion);
    w.u8(static_cast<std::uint8_t>(c.type));
    const std::string config = c.config.dump();
    w.u64(config.size());
    w.bytes(config.data(), config.size());
    w.u32(static_cast<std::uint32_t>(c.vocabulary.size()));
    for (const auto& id : c.vocabulary) w.str32(id);
    w.u32(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        w.str32(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u64(d);
        for (double v : t.values()) w.f64(v);
    }
    w.u32(crc_of(w.buffer()));
    return std::move(w.buffer());
}

ModelContainer parse_container(std::string_view bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CorruptionError("not a model container (bad magic)");
    Reader r(bytes);
    r.take(4);
    const auto version = r.u32();
    if (version != kContainerVersion)
        throw UnsupportedVersionError("model container version " + std::to_string(version) +
                                      " is not supported (expected " + std::to_string(kContainerVersion) + ")");
    if (bytes.size() < 13) throw CorruptionError("model container is truncated");
    const auto body = bytes.substr(0, bytes.size() - 4);
    Reader tail(bytes.substr(bytes.size() - 4));
    if (tail.u32() != crc_of(body)) throw CorruptionError("model container checksum mismatch");

    Reader in(body);
    in.take(8);
    ModelContainer c;
    const auto type = in.u8();
    if (type < 1 || type > 3) throw CorruptionError("unknown artifact type tag " + std::to_string(type));
    c.type = static_cast<ArtifactType>(type);
    const auto config_len = in.u64();
    if (config_len > in.remaining()) throw CorruptionError("model container is truncated");
    try {
        c.config = json::parse(in.take(config_len));
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("model container config is not valid JSON: ") + e.what());
    }
    const auto vocab = in.u32();
    for (std::uint32_t i = 0; i < vocab; ++i) c.vocabulary.push_back(in.str32());
    const auto count = in.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = in.str32();
        const auto rank = in.u32();
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = in.u64();
            if (d != 0 && n > in.remaining() / d) throw CorruptionError("tensor '" + name + "' is larger than the file");
            n *= d;
        }
        if (n > in.remaining() / 8) throw CorruptionError("tensor '" + name + "' is larger than the file");
        std::vector<double> values(n);
        for (auto& v : values) v = in.f64();
        c.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (in.remaining() != 0) throw CorruptionError("trailing bytes in model container");
    return c;
}

void save_container(const std::string& path, const ModelContainer& c) {
    const std::string bytes = serialize_container(c);
    const std::filesystem::path target(path);
    if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, target);
}

ModelContainer load_container(const std::string& path) {
    try {
        return parse_container(read_file(path));
    } catch (const CorruptionError& e) {
        throw CorruptionError(path + ": " + e.what());
    }
}

ModelContainer load_container(const std::string& path, ArtifactType expected) {
    auto c = load_container(path);
    if (c.type != expected)
        throw ArtifactTypeError(path + " holds a " + artifact_name(c.type) + " artifact, expected " +
                                artifact_name(expected));
    return c;
}

// ---------------------------------------------------------------------------
// Config snapshots

json to_json(const Stage1Config& cfg) {
    json hidden = json::array();
    for (const auto& h : cfg.hidden) hidden.push_back({{"width", h.width}, {"leak", h.leak}});
    return {{"hidden", hidden},
            {"batch_size", cfg.batch_size},
            {"learning_rate", cfg.learning_rate},
            {"stop_tol", number_to_json(cfg.stop_tol)},
            {"patience", cfg.patience},
            {"max_epochs", cfg.max_epochs},
            {"seed", cfg.seed},
            {"bn_eps", cfg.bn_eps},
            {"bn_momentum", cfg.bn_momentum},
            {"fractions",
             {{"train", cfg.fractions.train}, {"validation", cfg.fractions.validation}, {"test", cfg.fractions.test}}},
            {"availability_threshold", cfg.availability_threshold}};
}

namespace {

SplitFractions fractions_from_json(const json& j, SplitFractions f, const std::string& where) {
    ObjectReader r(j, where);
    r.read("train", f.train);
    r.read("validation", f.validation);
    r.read("test", f.test);
    r.finish();
    return f;
}

}  // namespace

Stage1Config stage1_config_from_json(const json& j, Stage1Config cfg) {
    ObjectReader r(j, "stage1");
    if (const auto* hidden = r.sub("hidden")) {
        if (!hidden->is_array()) throw ConfigError("stage1.hidden must be an array");
        cfg.hidden.clear();
        for (const auto& h : *hidden) {
            HiddenLayerConfig layer;
            ObjectReader hr(h, "stage1.hidden[]");
            hr.require("width", layer.width);
            hr.read("leak", layer.leak);
            hr.finish();
            cfg.hidden.push_back(layer);
        }
    }
    if (const auto* layout = r.sub("layout")) {
        const auto name = layout->is_string() ? layout->get<std::string>() : "";
        if (name == "uber") cfg.hidden = uber_layout();
        else if (name == "foursquare") cfg.hidden = foursquare_layout();
        else if (name == "ecml_pkdd15") cfg.hidden = ecml_pkdd15_layout();
        else throw ConfigError("stage1.layout must be one of uber, foursquare, ecml_pkdd15");
        if (r.has("hidden")) throw ConfigError("stage1: give either layout or hidden, not both");
    }
    r.read("batch_size", cfg.batch_size);
    r.read("learning_rate", cfg.learning_rate);
    r.read("stop_tol", cfg.stop_tol);
    r.read("patience", cfg.patience);
    r.read("max_epochs", cfg.max_epochs);
    r.read("seed", cfg.seed);
    r.read("bn_eps", cfg.bn_eps);
    r.read("bn_momentum", cfg.bn_momentum);
    if (const auto* f = r.sub("fractions")) cfg.fractions = fractions_from_json(*f, cfg.fractions, "stage1.fractions");
    r.read("availability_threshold", cfg.availability_threshold);
    r.finish();
    return cfg;
}

json to_json(const Stage2Config& cfg) {
    return {{"gamma", cfg.gamma},
            {"max_gamma", cfg.max_gamma},
            {"input_size", cfg.input_size},
            {"channels", cfg.channels},
            {"width_factor", cfg.width_factor},
            {"batch_norm", cfg.batch_norm},
            {"bn_eps", cfg.bn_eps},
            {"bn_momentum", cfg.bn_momentum},
            {"head_leak", cfg.head_leak},
            {"scheduler", {{"alpha0", cfg.scheduler.alpha0}, {"delta", cfg.scheduler.delta}, {"drop", cfg.scheduler.drop}}},
            {"batch_size", cfg.batch_size},
            {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"stop_tol", number_to_json(cfg.stop_tol)},
            {"seed", cfg.seed},
            {"balance", cfg.balance},
            {"augmentation",
             {{"rotation_deg", cfg.augmentation.rotation_deg},
              {"shear", cfg.augmentation.shear},
              {"tolerance", cfg.augmentation.tolerance}}}};
}

Stage2Config stage2_config_from_json(const json& j, Stage2Config cfg) {
    ObjectReader r(j, "stage2");
    r.read("gamma", cfg.gamma);
    r.read("max_gamma", cfg.max_gamma);
    r.read("input_size", cfg.input_size);
    r.read("channels", cfg.channels);
    r.read("width_factor", cfg.width_factor);
    r.read("batch_norm", cfg.batch_norm);
    r.read("bn_eps", cfg.bn_eps);
    r.read("bn_momentum", cfg.bn_momentum);
    r.read("head_leak", cfg.head_leak);
    if (const auto* s = r.sub("scheduler")) {
        ObjectReader sr(*s, "stage2.scheduler");
        sr.read("alpha0", cfg.scheduler.alpha0);
        sr.read("delta", cfg.scheduler.delta);
        sr.read("drop", cfg.scheduler.drop);
        sr.finish();
    }
    r.read("batch_size", cfg.batch_size);
    r.read("max_epochs", cfg.max_epochs);
    r.read("patience", cfg.patience);
    r.read("stop_tol", cfg.stop_tol);
    r.read("seed", cfg.seed);
    r.read("balance", cfg.balance);
    if (const auto* a = r.sub("augmentation")) {
        ObjectReader ar(*a, "stage2.augmentation");
        ar.read("rotation_deg", cfg.augmentation.rotation_deg);
        ar.read("shear", cfg.augmentation.shear);
        ar.read("tolerance", cfg.augmentation.tolerance);
        ar.finish();
    }
    r.finish();
    return cfg;
}

json to_json(const EncodingConfig& cfg) {
    return {{"normalize_latlon", cfg.normalize_latlon},
            {"include_month", cfg.include_month},
            {"lat_mean", cfg.lat_mean},
            {"lat_scale", cfg.lat_scale},
            {"lon_mean", cfg.lon_mean},
            {"lon_scale", cfg.lon_scale},
            {"num_clusters", cfg.num_clusters}};
}

EncodingConfig encoding_config_from_json(const json& j) {
    EncodingConfig cfg;
    ObjectReader r(j, "encoding");
    r.require("normalize_latlon", cfg.normalize_latlon);
    r.require("include_month", cfg.include_month);
    r.require("lat_mean", cfg.lat_mean);
    r.require("lat_scale", cfg.lat_scale);
    r.require("lon_mean", cfg.lon_mean);
    r.require("lon_scale", cfg.lon_scale);
    r.require("num_clusters", cfg.num_clusters);
    r.finish();
    return cfg;
}

json to_json(const GafOptions& opt) {
    return {{"epsilon", opt.epsilon},
            {"paa_size", opt.paa_size},
            {"gadf_form", opt.gadf_form == GadfForm::difference ? "difference" : "sum"}};
}

GafOptions gaf_options_from_json(const json& j, GafOptions opt) {
    ObjectReader r(j, "gaf");
    r.read("epsilon", opt.epsilon);
    r.read("paa_size", opt.paa_size);
    std::string form = opt.gadf_form == GadfForm::difference ? "difference" : "sum";
    r.read("gadf_form", form);
    if (form == "difference") opt.gadf_form = GadfForm::difference;
    else if (form == "sum") opt.gadf_form = GadfForm::sum;
    else throw ConfigError("gaf.gadf_form must be \"difference\" or \"sum\"");
    r.finish();
    return opt;
}

// ---------------------------------------------------------------------------
// Model <-> container

namespace {

Tensor centroid_tensor(const ClusterModel& model) {
    Tensor t({model.k(), 2});
    for (std::size_t i = 0; i < model.k(); ++i) {
        t.at(i, 0) = model.centroids()[i].lat;
        t.at(i, 1) = model.centroids()[i].lon;
    }
    return t;
}

ClusterModel clusters_from(const Tensor& t, double radius) {
    if (t.rank() != 2 || t.dim(1) != 2 || t.dim(0) == 0)
        throw CorruptionError("centroid tensor has shape " + to_string(t.shape()) + ", expected [k, 2]");
    std::vector<GeoPoint> centroids;
    for (std::size_t i = 0; i < t.dim(0); ++i) centroids.push_back(GeoPoint::make(t.at(i, 0), t.at(i, 1)));
    return ClusterModel(std::move(centroids), radius);
}

const Tensor& tensor_at(const ModelContainer& c, const std::string& name) {
    const auto it = c.tensors.find(name);
    if (it == c.tensors.end()) throw CorruptionError("model container lacks tensor '" + name + "'");
    return it->second;
}

template <class F>
auto decode(const char* what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw CorruptionError(std::string(what) + " container config is malformed: " + e.what());
    } catch (const ConfigError& e) {
        throw CorruptionError(std::string(what) + " container config is malformed: " + e.what());
    }
}

}  // namespace

ModelContainer to_container(const ClusterModel& model) {
    ModelContainer c;
    c.type = ArtifactType::cluster;
    c.config = {{"k", model.k()}, {"earth_radius_km", model.earth_radius_km()}};
    c.tensors.emplace("centroids", centroid_tensor(model));
    return c;
}

ClusterModel cluster_from_container(const ModelContainer& c) {
    if (c.type != ArtifactType::cluster)
        throw ArtifactTypeError(std::string("expected a cluster artifact, got ") + artifact_name(c.type));
    const double radius = decode("cluster", [&] { return c.config.at("earth_radius_km").get<double>(); });
    return clusters_from(tensor_at(c, "centroids"), radius);
}

ModelContainer to_container(const Stage1Model& model) {
    ModelContainer c;
    c.type = ArtifactType::stage1;
    c.config = {{"stage1", to_json(model.config)},
                {"encoding", to_json(model.encoding)},
                {"network", to_json(model.network.spec())},
                {"earth_radius_km", model.clusters.earth_radius_km()}};
    c.vocabulary = model.vocabulary.ids();
    c.tensors = model.network.state("network.");
    c.tensors.emplace("clusters.centroids", centroid_tensor(model.clusters));
    return c;
}

Stage1Model stage1_from_container(const ModelContainer& c) {
    if (c.type != ArtifactType::stage1)
        throw ArtifactTypeError(std::string("expected a stage1 artifact, got ") + artifact_name(c.type));
    Stage1Model m;
    decode("stage1", [&] {
        m.config = stage1_config_from_json(c.config.at("stage1"));
        m.encoding = encoding_config_from_json(c.config.at("encoding"));
        m.clusters = clusters_from(tensor_at(c, "clusters.centroids"), c.config.at("earth_radius_km").get<double>());
        m.network = Sequential(network_spec_from_json(c.config.at("network")), 0);
        return 0;
    });
    m.vocabulary = Vocabulary(c.vocabulary);
    if (m.encoding.num_clusters != m.clusters.k())
        throw CorruptionError("stage1 container: encoding expects " + std::to_string(m.encoding.num_clusters) +
                              " clusters, centroids hold " + std::to_string(m.clusters.k()));
    m.network.load_state(c.tensors, "network.");
    return m;
}

ModelContainer to_container(const Stage2Model& model, const json& extra) {
    ModelContainer c;
    c.type = ArtifactType::stage2;
    c.config = {{"stage2", to_json(model.config)}, {"extra", extra}};
    c.tensors = model.network.state();
    return c;
}

Stage2Model stage2_from_container(const ModelContainer& c) {
    if (c.type != ArtifactType::stage2)
        throw ArtifactTypeError(std::string("expected a stage2 artifact, got ") + artifact_name(c.type));
    const auto cfg = decode("stage2", [&] { return stage2_config_from_json(c.config.at("stage2")); });
    Stage2Model m = build_dual_model(cfg);
    m.network.load_state(c.tensors);
    return m;
}

// ---------------------------------------------------------------------------
// Hashing

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw IoError("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

std::string file_sha256(const std::string& path) { return sha256_hex(read_file(path)); }

}  // namespace availnet
