#include "gradfeat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gradfeat/error.hpp"

namespace gradfeat {

namespace {

constexpr char kMagic[4] = {'G', 'F', 'C', 'K'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        auto* b = static_cast<const char*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    template <typename T>
    void le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float f) { le(std::bit_cast<std::uint32_t>(f)); }
    const std::vector<char>& buffer() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

    template <typename T>
    T le(const char* what) {
        need(sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    bool at_end() const { return pos_ == data_.size(); }
    void need(std::size_t n, const char* what) const {
        if (n > data_.size() - pos_)
            throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " reading " + what + " (" +
                              std::to_string(n) + " bytes needed, " + std::to_string(data_.size() - pos_) +
                              " available)");
    }

private:
    std::vector<char> data_;
    std::size_t pos_ = 0;
};

} // namespace

const Tensor& CheckpointData::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.tensor;
    throw FormatError("checkpoint has no tensor named '" + name + "'");
}

bool CheckpointData::has(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    Writer w;
    w.bytes(kMagic, 4);
    w.le<std::uint32_t>(kCheckpointVersion);
    const std::string header = data.header.dump();
    w.le<std::uint32_t>(static_cast<std::uint32_t>(header.size()));
    w.bytes(header.data(), header.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(data.tensors.size()));
    for (const auto& nt : data.tensors) {
        w.le<std::uint32_t>(static_cast<std::uint32_t>(nt.name.size()));
        w.bytes(nt.name.data(), nt.name.size());
        w.le<std::uint8_t>(0);
        w.le<std::uint32_t>(static_cast<std::uint32_t>(nt.tensor.rank()));
        for (auto d : nt.tensor.shape()) w.le<std::uint64_t>(d);
        for (float f : nt.tensor.values()) w.f32(f);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

    const std::string magic = r.str(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic at offset 0");
    const std::size_t version_at = r.pos();
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset " +
                          std::to_string(version_at));

    CheckpointData data;
    const auto header_len = r.le<std::uint32_t>("header length");
    const std::size_t header_at = r.pos();
    const std::string header = r.str(header_len, "header");
    try {
        data.header = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid header JSON at offset " + std::to_string(header_at) + ": " + e.what());
    }

    const auto count = r.le<std::uint32_t>("tensor count");
    for (std::uint32_t t = 0; t < count; ++t) {
        NamedTensor nt;
        const auto name_len = r.le<std::uint32_t>("tensor name length");
        nt.name = r.str(name_len, "tensor name");
        const std::size_t dtype_at = r.pos();
        const auto dtype = r.le<std::uint8_t>("dtype");
        if (dtype != 0)
            throw FormatError("unsupported dtype code " + std::to_string(dtype) + " at offset " +
                              std::to_string(dtype_at));
        const auto rank = r.le<std::uint32_t>("rank");
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::size_t dim_at = r.pos();
            const auto d = r.le<std::uint64_t>("dims");
            if (d == 0) throw FormatError("zero dimension at offset " + std::to_string(dim_at));
            shape.push_back(static_cast<std::size_t>(d));
            numel *= static_cast<std::size_t>(d);
        }
        r.need(numel * 4, "tensor payload");
        std::vector<float> values(numel);
        for (auto& v : values) v = std::bit_cast<float>(r.le<std::uint32_t>("tensor payload"));
        nt.tensor = Tensor(std::move(shape), std::move(values));
        data.tensors.push_back(std::move(nt));
    }
    if (!r.at_end()) throw FormatError("trailing bytes after last tensor at offset " + std::to_string(r.pos()));
    return data;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkDef& def, const ParamSet& params) {
    check_params(def, params);
    CheckpointData data;
    nlohmann::json prov = nlohmann::json::object();
    for (const auto& [name, p] : params.provenance) prov[name] = to_string(p);
    data.header = {{"section", "network"}, {"network", to_json(def)}, {"provenance", prov}};
    for (const auto& name : def.param_names()) {
        const auto& lp = params.at(name);
        data.tensors.push_back({name + ".weight", lp.weight});
        if (lp.bias) data.tensors.push_back({name + ".bias", *lp.bias});
    }
    write_checkpoint(path, data);
}

std::pair<NetworkDef, ParamSet> load_checkpoint(const std::filesystem::path& path) {
    CheckpointData data = read_checkpoint(path);
    if (data.header.value("section", std::string{}) != "network")
        throw FormatError("checkpoint '" + path.string() + "' does not hold a network section");
    NetworkDef def = network_from_json(data.header.at("network"));
    ParamSet ps;
    for (const auto& name : def.param_names()) {
        LayerParams lp{data.tensor(name + ".weight"), std::nullopt};
        if (data.has(name + ".bias")) lp.bias = data.tensor(name + ".bias");
        ps.layers.emplace(name, std::move(lp));
        const auto& prov = data.header.value("provenance", nlohmann::json::object());
        ps.provenance.emplace(name, provenance_from_string(prov.value(name, std::string("random"))));
    }
    check_params(def, ps);
    return {std::move(def), std::move(ps)};
}

} // namespace gradfeat
