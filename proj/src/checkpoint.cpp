#include "morse/checkpoint.hpp"

#include <cstring>

#include "morse/util.hpp"

namespace morse {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'R', 'S', 'E', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

struct Reader {
    std::string_view bytes;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > bytes.size()) throw DataError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string str() {
        uint64_t len = u64();
        need(len);
        std::string s(bytes.substr(pos, len));
        pos += len;
        return s;
    }
};

}  // namespace

std::string checkpoint_bytes(const MorseModel& model) {
    const MorseConfig& cfg = model.config();
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);

    out.push_back(static_cast<char>(cfg.mode));
    out.push_back(static_cast<char>(cfg.use_context));
    out.push_back(static_cast<char>(cfg.use_output_encoder));
    out.push_back(static_cast<char>(cfg.carry_output_state));
    put_u64(out, cfg.hidden);
    put_u64(out, cfg.char_emb_size);
    put_u64(out, cfg.out_emb_size);
    put_u64(out, cfg.max_decode_len);

    model.vocab().serialize(out);
    put_u64(out, model.vocab().hash());

    put_u64(out, model.tags().size());
    for (const std::string& tag : model.tags().tags) {
        put_u64(out, tag.size());
        out += tag;
    }

    auto tensors = model.params().named_tensors();
    put_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        if (!t->all_finite()) throw NumericError("checkpoint: non-finite values in " + name);
        put_u64(out, name.size());
        out += name;
        put_u32(out, static_cast<uint32_t>(t->rank()));
        for (size_t d : t->shape()) put_u64(out, d);
        for (size_t i = 0; i < t->size(); ++i) put_f64(out, (*t)[i]);
    }
    return out;
}

MorseModel model_from_checkpoint_bytes(std::string_view bytes) {
    Reader r{bytes};
    r.need(sizeof(kMagic));
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic");
    r.pos = sizeof(kMagic);
    if (r.u32() != kVersion) throw DataError("checkpoint: unsupported version");

    MorseConfig cfg;
    r.need(4);
    if (static_cast<unsigned char>(bytes[r.pos]) > 2) throw DataError("checkpoint: bad mode byte");
    cfg.mode = static_cast<Mode>(bytes[r.pos]);
    cfg.use_context = bytes[r.pos + 1] != 0;
    cfg.use_output_encoder = bytes[r.pos + 2] != 0;
    cfg.carry_output_state = bytes[r.pos + 3] != 0;
    r.pos += 4;
    cfg.hidden = r.u64();
    cfg.char_emb_size = r.u64();
    cfg.out_emb_size = r.u64();
    cfg.max_decode_len = r.u64();

    Vocabulary vocab = Vocabulary::deserialize(bytes, r.pos);
    uint64_t stored_hash = r.u64();
    if (vocab.hash() != stored_hash) throw DataError("checkpoint: vocabulary hash mismatch");

    TagInventory tags;
    uint64_t n_tags = r.u64();
    for (uint64_t i = 0; i < n_tags; ++i) {
        std::string tag = r.str();
        tags.index.emplace(tag, tags.tags.size());
        tags.tags.push_back(std::move(tag));
    }

    MorseModel model(cfg, std::move(vocab), std::move(tags));
    MorseParams loaded = model.params();  // zero-shaped template
    auto slots = loaded.named_tensors();
    uint64_t n_tensors = r.u64();
    if (n_tensors != slots.size()) throw DataError("checkpoint: unexpected tensor count");
    for (uint64_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str();
        if (name != slots[i].first)
            throw DataError("checkpoint: unexpected tensor '" + name + "'");
        uint32_t rank = r.u32();
        std::vector<size_t> shape(rank);
        for (auto& d : shape) d = r.u64();
        Tensor t(shape);
        for (size_t k = 0; k < t.size(); ++k) t[k] = r.f64();
        if (!t.all_finite()) throw DataError("checkpoint: non-finite values in " + name);
        *slots[i].second = std::move(t);
    }
    if (r.pos != bytes.size()) throw DataError("checkpoint: trailing bytes");
    validate_shapes(loaded, model.config(), model.vocab(), model.tags().size());
    model.params() = std::move(loaded);
    return model;
}

void save_checkpoint(const std::string& path, const MorseModel& model) {
    write_file(path, checkpoint_bytes(model));
}

MorseModel load_checkpoint(const std::string& path) {
    return model_from_checkpoint_bytes(read_file(path));
}

}  // namespace morse
