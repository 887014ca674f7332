#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "gradreg/train.hpp"
#include "gradreg/volume.hpp"

namespace gradreg {

namespace {

constexpr const char* kMagic = "GRADREG-CHECKPOINT 1";

void append_tensor(std::string& out, const std::string& name, const Tensor& t) {
    const Dims& d = t.dims();
    out += "tensor " + name + " " + std::to_string(t.channels()) + " " + std::to_string(d.nx) + " " +
           std::to_string(d.ny) + " " + std::to_string(d.nz) + "\n";
    const std::size_t start = out.size();
    out.resize(start + t.size() * 8);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(t[i]);
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
        std::memcpy(out.data() + start + i * 8, &bits, 8);
    }
    out += "\n";
}

Tensor history_tensor(const std::vector<LossReport>& history) {
    // An empty history is stored as a single NaN column.
    if (history.empty()) return Tensor(Shape{5, Dims{1, 1, 1}}, std::nan(""));
    const std::size_t n = history.size();
    Tensor t(Shape{5, Dims{static_cast<int>(n), 1, 1}});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = history[i];
        t[0 * n + i] = r.isim;
        t[1 * n + i] = r.gsim;
        t[2 * n + i] = r.igreg;
        t[3 * n + i] = r.greg;
        t[4 * n + i] = r.total;
    }
    return t;
}

std::vector<LossReport> history_from(const Tensor& t) {
    std::vector<LossReport> out;
    const std::size_t n = t.dims().size();
    if (t.channels() != 5) throw VolumeIoError("checkpoint history must have 5 channels");
    if (n == 1 && std::isnan(t[0])) return out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({t[i], t[n + i], t[2 * n + i], t[3 * n + i], t[4 * n + i]});
    }
    return out;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::string line() {
        const auto nl = bytes_.find('\n', pos_);
        if (nl == std::string::npos) throw VolumeIoError("truncated checkpoint");
        std::string s = bytes_.substr(pos_, nl - pos_);
        pos_ = nl + 1;
        return s;
    }

    std::vector<double> doubles(std::size_t count) {
        if (count > (bytes_.size() - pos_) / 8) throw VolumeIoError("truncated checkpoint tensor payload");
        std::vector<double> out(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, bytes_.data() + pos_ + i * 8, 8);
            if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
            out[i] = std::bit_cast<double>(bits);
        }
        pos_ += count * 8;
        if (line() != "") throw VolumeIoError("malformed checkpoint tensor terminator");
        return out;
    }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::vector<NamedTensor> with_prefix(const std::vector<NamedTensor>& all, const std::string& prefix) {
    std::vector<NamedTensor> out;
    for (const auto& t : all) {
        if (t.name.rfind(prefix, 0) == 0) out.push_back({t.name.substr(prefix.size()), t.value});
    }
    return out;
}

void fill_network(Network& net, const std::vector<NamedTensor>& tensors, const std::string& which) {
    if (tensors.size() != net.params.size()) {
        throw VolumeIoError("checkpoint " + which + " has " + std::to_string(tensors.size()) + " tensors, expected " +
                            std::to_string(net.params.size()));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].name != net.params[i].name || tensors[i].value.shape() != net.params[i].value.shape()) {
            throw VolumeIoError("checkpoint " + which + " tensor mismatch at " + tensors[i].name);
        }
        net.params[i].value = tensors[i].value;
    }
}

}  // namespace

std::string checkpoint_bytes(const TrainedModel& model) {
    std::string out = std::string(kMagic) + "\n";
    const std::string cfg = to_config_text(model.config);
    out += "config " + std::to_string(cfg.size()) + "\n" + cfg;
    for (const auto& p : model.net_i.params) append_tensor(out, "net_i/" + p.name, p.value);
    for (const auto& p : model.net_g.params) append_tensor(out, "net_g/" + p.name, p.value);
    if (model.fusion) {
        for (const auto& p : model.fusion->named()) append_tensor(out, "fusion/" + p.name, p.value);
    }
    append_tensor(out, "history", history_tensor(model.history));
    out += "end\n";
    return out;
}

TrainedModel parse_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.line() != kMagic) throw VolumeIoError("not a gradreg checkpoint");
    const std::string cfg_line = r.line();
    if (cfg_line.rfind("config ", 0) != 0) throw VolumeIoError("checkpoint is missing its config section");
    const std::size_t cfg_len = std::stoul(cfg_line.substr(7));
    std::string cfg_text;
    while (cfg_text.size() < cfg_len) cfg_text += r.line() + "\n";
    if (cfg_text.size() != cfg_len) throw VolumeIoError("checkpoint config length mismatch");

    TrainConfig config;
    try {
        config = parse_train_config(cfg_text);
    } catch (const std::invalid_argument& e) {
        throw VolumeIoError(std::string("checkpoint config: ") + e.what());
    }

    std::vector<NamedTensor> tensors;
    for (;;) {
        const std::string header = r.line();
        if (header == "end") break;
        std::istringstream in(header);
        std::string kw, name;
        int ch = 0, nx = 0, ny = 0, nz = 0;
        if (!(in >> kw >> name >> ch >> nx >> ny >> nz) || kw != "tensor" || ch <= 0 || nx <= 0 || ny <= 0 ||
            nz <= 0) {
            throw VolumeIoError("malformed checkpoint tensor header: " + header);
        }
        const Shape shape{ch, Dims{nx, ny, nz}};
        auto values = r.doubles(shape.size());
        tensors.push_back({name, Tensor(shape, std::move(values))});
    }

    TrainedModel model = init_model(config);
    fill_network(model.net_i, with_prefix(tensors, "net_i/"), "net_i");
    fill_network(model.net_g, with_prefix(tensors, "net_g/"), "net_g");
    const auto fusion = with_prefix(tensors, "fusion/");
    if (model.fusion) {
        try {
            model.fusion = GatedFusionParams::from_named(fusion);
        } catch (const std::invalid_argument& e) {
            throw VolumeIoError(std::string("checkpoint fusion: ") + e.what());
        }
    } else if (!fusion.empty()) {
        throw VolumeIoError("checkpoint has fusion tensors but fusion_mode is not gated");
    }
    bool have_history = false;
    for (const auto& t : tensors) {
        if (t.name == "history") {
            model.history = history_from(t.value);
            have_history = true;
        }
    }
    if (!have_history) throw VolumeIoError("checkpoint is missing its history");
    return model;
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, checkpoint_bytes(model));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace gradreg
