#include "phyadapt/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "phyadapt/errors.hpp"

namespace phyadapt {

using nlohmann::json;

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    put_u64(out, bits);
}

uint32_t get_u32(const std::string& buf, size_t& pos) {
    if (pos + 4 > buf.size()) throw IoError("checkpoint truncated in fixed header");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
}

uint64_t get_u64(const std::string& buf, size_t& pos) {
    if (pos + 8 > buf.size()) throw IoError("checkpoint truncated before checksum");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
}

uint64_t fnv1a_bytes(const char* data, size_t n) {
    uint64_t h = 14695981039346656037ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

struct Writer {
    json header;
    json manifest = json::array();
    std::string payload;

    void add(const std::string& name, const Tensor& t) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}, {"count", t.size()}});
        for (double v : t.data()) put_f64(payload, v);
    }

    void write(const std::string& path, const std::string& kind) {
        header["kind"] = kind;
        header["tensors"] = manifest;
        const std::string header_text = header.dump();
        std::string out;
        out.append(kCheckpointMagic, 8);
        put_u32(out, kVersion);
        put_u32(out, static_cast<uint32_t>(header_text.size()));
        out += header_text;
        put_u64(out, fnv1a_bytes(payload.data(), payload.size()));
        out += payload;
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write checkpoint '" + path + "'");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("short write on checkpoint '" + path + "'");
    }
};

struct Reader {
    json header;
    uint64_t payload_checksum = 0;
    std::string payload;
    size_t cursor = 0;

    explicit Reader(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open checkpoint '" + path + "'");
        std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) {
            throw IoError("'" + path + "' is not a checkpoint: bad magic header");
        }
        size_t pos = 8;
        const uint32_t version = get_u32(buf, pos);
        if (version != kVersion) {
            throw IoError("unsupported checkpoint version " + std::to_string(version));
        }
        const uint32_t header_len = get_u32(buf, pos);
        if (pos + header_len > buf.size()) throw IoError("checkpoint truncated inside header");
        header = json::parse(buf.substr(pos, header_len));
        pos += header_len;
        payload_checksum = get_u64(buf, pos);
        payload = buf.substr(pos);
        if (fnv1a_bytes(payload.data(), payload.size()) != payload_checksum) {
            throw IoError("checkpoint payload checksum mismatch (truncated or corrupt file)");
        }
        int64_t expected = 0;
        for (const auto& e : header["tensors"]) expected += e["count"].get<int64_t>();
        if (static_cast<int64_t>(payload.size()) != expected * 8) {
            throw IoError("checkpoint payload length disagrees with tensor manifest");
        }
    }

    Tensor take(const std::string& name) {
        const auto& entry = header["tensors"][cursor_index];
        if (entry["name"].get<std::string>() != name) {
            throw IoError("checkpoint tensor order mismatch: expected '" + name + "', found '" +
                          entry["name"].get<std::string>() + "'");
        }
        const auto shape = entry["shape"].get<std::vector<int>>();
        const int64_t count = entry["count"].get<int64_t>();
        std::vector<double> data(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i) {
            uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) {
                bits |= static_cast<uint64_t>(static_cast<unsigned char>(payload[cursor + 8 * static_cast<size_t>(i) + static_cast<size_t>(b)])) << (8 * b);
            }
            double d;
            std::memcpy(&d, &bits, sizeof(d));
            data[static_cast<size_t>(i)] = d;
        }
        cursor += static_cast<size_t>(count) * 8;
        ++cursor_index;
        return Tensor(shape, std::move(data));
    }

    size_t cursor_index = 0;
};

json encoder_config_to_json(const EncoderConfig& c) {
    return {{"vocab_size", c.vocab_size},   {"hidden_dim", c.hidden_dim},
            {"num_layers", c.num_layers},   {"num_heads", c.num_heads},
            {"ffn_dim", c.ffn_dim},         {"max_seq_len", c.max_seq_len},
            {"dropout", c.dropout},
            {"gelu", c.gelu_kind == GeluKind::TanhApprox ? "tanh" : "erf"}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.gelu_kind = j.value("gelu", "tanh") == "erf" ? GeluKind::Exact : GeluKind::TanhApprox;
    return c;
}

json adapter_spec_to_json(const AdapterSpec& s) {
    const char* act = s.activation == AdapterActivation::Gelu
                          ? "gelu"
                          : (s.activation == AdapterActivation::GeluExact ? "gelu_erf" : "identity");
    return {{"hidden_dim", s.hidden_dim},
            {"bottleneck_dim", s.bottleneck_dim},
            {"num_layers", s.num_layers},
            {"node_id", s.node_id},
            {"activation", act}};
}

AdapterSpec adapter_spec_from_json(const json& j) {
    AdapterSpec s;
    s.hidden_dim = j.at("hidden_dim").get<int>();
    s.bottleneck_dim = j.at("bottleneck_dim").get<int>();
    s.num_layers = j.at("num_layers").get<int>();
    s.node_id = j.at("node_id").get<std::string>();
    const std::string act = j.value("activation", "gelu");
    s.activation = act == "identity" ? AdapterActivation::Identity
                                     : (act == "gelu_erf" ? AdapterActivation::GeluExact
                                                          : AdapterActivation::Gelu);
    return s;
}

void add_adapter(Writer& w, const std::string& prefix, const AdapterParams& a) {
    for (const auto& [name, t] : a.named_params()) w.add(prefix + name, *t);
}

AdapterParams take_adapter(Reader& r, const std::string& prefix, const AdapterSpec& spec) {
    AdapterParams a;
    a.spec = spec;
    a.layers.resize(static_cast<size_t>(spec.num_layers));
    for (int l = 0; l < spec.num_layers; ++l) {
        const std::string p = prefix + "layer" + std::to_string(l) + ".";
        a.layers[static_cast<size_t>(l)].w_down = r.take(p + "w_down");
        a.layers[static_cast<size_t>(l)].b_down = r.take(p + "b_down");
        a.layers[static_cast<size_t>(l)].w_up = r.take(p + "w_up");
    }
    return a;
}

}  // namespace

int64_t CheckpointInfo::total_params() const {
    int64_t n = 0;
    for (const auto& e : tensors) n += e.count;
    return n;
}

CheckpointInfo inspect_checkpoint(const std::string& path) {
    Reader r(path);
    CheckpointInfo info;
    info.kind = r.header.value("kind", "");
    info.version = kVersion;
    info.payload_checksum = r.payload_checksum;
    info.header_json = r.header.dump(2);
    for (const auto& e : r.header["tensors"]) {
        info.tensors.push_back({e["name"].get<std::string>(),
                                e["shape"].get<std::vector<int>>(),
                                e["count"].get<int64_t>()});
    }
    return info;
}

void save_backbone(const std::string& path, const Backbone& backbone, const Vocab& vocab) {
    Writer w;
    w.header["config"] = encoder_config_to_json(backbone.config);
    w.header["vocab"] = vocab.id_to_token;
    for (const auto& [name, t] : backbone.named_params()) w.add(name, *t);
    w.write(path, "backbone");
}

Backbone load_backbone(const std::string& path, Vocab* vocab_out) {
    Reader r(path);
    if (r.header.value("kind", "") != "backbone") {
        throw IoError("'" + path + "' holds a '" + r.header.value("kind", "?") +
                      "' checkpoint, expected backbone");
    }
    const EncoderConfig config = encoder_config_from_json(r.header["config"]);
    Backbone b = init_backbone(config, 0);
    for (auto& [name, t] : b.named_params()) *t = r.take(name);
    b.frozen = true;
    if (vocab_out) {
        Vocab v;
        v.id_to_token = r.header.at("vocab").get<std::vector<std::string>>();
        for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[static_cast<size_t>(i)]] = i;
        *vocab_out = v;
    }
    return b;
}

void save_adapter_bank(const std::string& path, const AdapterBank& bank) {
    Writer w;
    json nodes = json::array();
    json counts = json::object();
    for (const auto& [node_id, params] : bank.adapters) {
        nodes.push_back(adapter_spec_to_json(params.spec));
        auto it = bank.update_counts.find(node_id);
        counts[node_id] = it == bank.update_counts.end() ? 0 : it->second;
    }
    w.header["nodes"] = nodes;
    w.header["update_counts"] = counts;
    for (const auto& [node_id, params] : bank.adapters) {
        add_adapter(w, node_id + "/", params);
    }
    w.write(path, "adapter_bank");
}

AdapterBank load_adapter_bank(const std::string& path) {
    Reader r(path);
    if (r.header.value("kind", "") != "adapter_bank") {
        throw IoError("'" + path + "' holds a '" + r.header.value("kind", "?") +
                      "' checkpoint, expected adapter_bank");
    }
    AdapterBank bank;
    for (const auto& node : r.header["nodes"]) {
        const AdapterSpec spec = adapter_spec_from_json(node);
        bank.adapters.emplace(spec.node_id, take_adapter(r, spec.node_id + "/", spec));
    }
    if (r.header.contains("update_counts")) {
        for (const auto& [node_id, n] : r.header["update_counts"].items()) {
            bank.update_counts[node_id] = n.get<int64_t>();
        }
    }
    return bank;
}

void save_task_adapter(const std::string& path, const TaskAdapter& task) {
    Writer w;
    w.header["adapter_spec"] = adapter_spec_to_json(task.adapter.spec);
    w.header["task"] = task_kind_name(task.task);
    w.header["source_iso"] = task.source_iso;
    w.header["trained_with"] = stack_code_name(task.trained_with);
    add_adapter(w, "adapter/", task.adapter);
    if (const auto* pos = std::get_if<PosHead>(&task.head)) {
        w.header["head"] = {{"type", "pos"}, {"num_tags", pos->num_tags}};
        w.add("head/w", pos->w);
        w.add("head/b", pos->b);
    } else if (const auto* dep = std::get_if<BiaffineHead>(&task.head)) {
        w.header["head"] = {{"type", "biaffine"}, {"r", dep->r}};
        w.add("head/w_head", dep->w_head);
        w.add("head/b_head", dep->b_head);
        w.add("head/w_dep", dep->w_dep);
        w.add("head/b_dep", dep->b_dep);
        w.add("head/u", dep->u);
        w.add("head/v_head", dep->v_head);
        w.add("head/v_dep", dep->v_dep);
        w.add("head/bias", dep->bias);
        w.add("head/root", dep->root);
    } else if (const auto* nli = std::get_if<NliHead>(&task.head)) {
        w.header["head"] = {{"type", "nli"}};
        w.add("head/w", nli->w);
        w.add("head/b", nli->b);
    }
    w.write(path, "task_adapter");
}

TaskAdapter load_task_adapter(const std::string& path) {
    Reader r(path);
    if (r.header.value("kind", "") != "task_adapter") {
        throw IoError("'" + path + "' holds a '" + r.header.value("kind", "?") +
                      "' checkpoint, expected task_adapter");
    }
    TaskAdapter task;
    task.task = task_kind_from_name(r.header.at("task").get<std::string>());
    task.source_iso = r.header.at("source_iso").get<std::string>();
    task.trained_with = stack_code_from_name(r.header.at("trained_with").get<std::string>());
    const AdapterSpec spec = adapter_spec_from_json(r.header["adapter_spec"]);
    task.adapter = take_adapter(r, "adapter/", spec);
    const std::string head_type = r.header.at("head").at("type").get<std::string>();
    if (head_type == "pos") {
        PosHead h;
        h.num_tags = r.header["head"]["num_tags"].get<int>();
        h.w = r.take("head/w");
        h.b = r.take("head/b");
        task.head = std::move(h);
    } else if (head_type == "biaffine") {
        BiaffineHead h;
        h.r = r.header["head"]["r"].get<int>();
        h.w_head = r.take("head/w_head");
        h.b_head = r.take("head/b_head");
        h.w_dep = r.take("head/w_dep");
        h.b_dep = r.take("head/b_dep");
        h.u = r.take("head/u");
        h.v_head = r.take("head/v_head");
        h.v_dep = r.take("head/v_dep");
        h.bias = r.take("head/bias");
        h.root = r.take("head/root");
        task.head = std::move(h);
    } else if (head_type == "nli") {
        NliHead h;
        h.w = r.take("head/w");
        h.b = r.take("head/b");
        task.head = std::move(h);
    } else {
        throw IoError("unknown task head type '" + head_type + "'");
    }
    return task;
}

}  // namespace phyadapt
