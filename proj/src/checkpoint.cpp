#include <cstring>
#include <fstream>
#include <sstream>

#include "y12/model.hpp"

namespace y12 {

// Layout, all multi-byte values little-endian:
//   "Y12C" | u32 version | u32 config_len | config text | u32 tensor_count
//   then per tensor: u16 name_len | name | u8 dtype(0=f32) | u8 rank |
//   u32 dims[rank] | f32 payload
namespace {

constexpr char kMagic[4] = {'Y', '1', '2', 'C'};
constexpr uint32_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct Reader {
    std::string buf;
    size_t pos = 0;

    explicit Reader(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error("cannot open checkpoint '" + path + "'");
        std::ostringstream os;
        os << in.rdbuf();
        buf = os.str();
    }

    const char* take(size_t n) {
        if (pos + n > buf.size())
            throw format_error("checkpoint truncated at byte " + std::to_string(pos));
        const char* p = buf.data() + pos;
        pos += n;
        return p;
    }

    uint16_t u16() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(2));
        return static_cast<uint16_t>(p[0] | (p[1] << 8));
    }

    uint32_t u32() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
        return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    }

    float f32() {
        const uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    void done() {
        if (pos != buf.size())
            throw format_error("checkpoint has " + std::to_string(buf.size() - pos) +
                               " trailing bytes");
    }
};

struct Entry {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
};

std::pair<std::string, std::vector<Entry>> read_file(const std::string& path) {
    Reader r(path);
    if (std::memcmp(r.take(4), kMagic, 4) != 0)
        throw format_error("not a checkpoint: bad magic in '" + path + "'");
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw format_error("unsupported checkpoint version " + std::to_string(version));
    const uint32_t cfg_len = r.u32();
    std::string cfg_text(r.take(cfg_len), cfg_len);
    const uint32_t count = r.u32();
    std::vector<Entry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        const uint16_t name_len = r.u16();
        e.name.assign(r.take(name_len), name_len);
        const unsigned char dtype = static_cast<unsigned char>(*r.take(1));
        if (dtype != 0)
            throw format_error("tensor '" + e.name + "': unsupported dtype " +
                               std::to_string(dtype));
        const unsigned char rank = static_cast<unsigned char>(*r.take(1));
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            e.shape.push_back(static_cast<int64_t>(r.u32()));
            numel *= e.shape.back();
        }
        e.data.resize(static_cast<size_t>(numel));
        for (auto& v : e.data) v = r.f32();
        entries.push_back(std::move(e));
    }
    r.done();
    return {std::move(cfg_text), std::move(entries)};
}

std::string shape_str(const std::vector<int64_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    const std::string cfg = model.config().to_text(model.seed());
    put_u32(out, static_cast<uint32_t>(cfg.size()));
    out += cfg;

    uint32_t count = 0;
    model.visit_params([&](const std::string&, Tensor&) { ++count; });
    put_u32(out, count);
    model.visit_params([&](const std::string& name, Tensor& t) {
        put_u16(out, static_cast<uint16_t>(name.size()));
        out += name;
        out.push_back(0);  // dtype f32
        out.push_back(static_cast<char>(t.rank()));
        for (int64_t d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : t.data) put_f32(out, v);
    });

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot write checkpoint '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("short write to checkpoint '" + path + "'");
}

void load_checkpoint_into(Model& model, const std::string& path) {
    auto [cfg_text, entries] = read_file(path);
    (void)cfg_text;
    size_t i = 0;
    model.visit_params([&](const std::string& name, Tensor& t) {
        if (i >= entries.size())
            throw compat_error("checkpoint is missing tensor '" + name + "'");
        Entry& e = entries[i++];
        if (e.name != name)
            throw compat_error("checkpoint tensor '" + e.name + "' where model expects '" + name +
                               "'");
        if (e.shape != t.shape)
            throw compat_error("tensor '" + name + "': checkpoint shape " + shape_str(e.shape) +
                               " does not match model shape " + t.shape_str());
        t.data = std::move(e.data);
    });
    if (i != entries.size())
        throw compat_error("checkpoint has unexpected extra tensor '" + entries[i].name + "'");
}

Model load_checkpoint(const std::string& path) {
    auto [cfg_text, entries] = read_file(path);
    (void)entries;
    auto [cfg, seed] = ModelConfig::from_text(cfg_text);
    Model model(cfg, seed);
    load_checkpoint_into(model, path);
    return model;
}

}  // namespace y12
