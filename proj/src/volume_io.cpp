#include "gradreg/volume.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace gradreg {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

template <class T>
T byteswap_value(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
}

// Reads a T stored at `offset` in `bytes`, which has byte order `swap` relative to the host.
template <class T>
T read_at(const std::string& bytes, std::size_t offset, bool swap) {
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return swap ? byteswap_value(v) : v;
}

template <class T>
void append_le(std::string& out, T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

constexpr bool kHostLittle = std::endian::native == std::endian::little;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(trim(item));
    return parts;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool float32_lossless(const std::vector<double>& data) {
    for (double v : data) {
        if (static_cast<double>(static_cast<float>(v)) != v) return false;
    }
    return true;
}

}  // namespace

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw VolumeIoError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::random_device rd;
    const fs::path tmp = dir / (path.filename().string() + ".tmp" + std::to_string(rd()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw VolumeIoError("cannot write file: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw VolumeIoError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw VolumeIoError("cannot rename into place: " + path.string());
    }
}

std::pair<fs::path, fs::path> raw_paths(const fs::path& path) {
    fs::path base = path;
    if (base.extension() == ".vol" || base.extension() == ".volh") base.replace_extension();
    fs::path payload = base;
    payload += ".vol";
    fs::path header = base;
    header += ".volh";
    return {payload, header};
}

RawImage load_raw(const fs::path& path) {
    const auto [payload_path, header_path] = raw_paths(path);
    if (!fs::exists(header_path)) throw VolumeIoError("missing header file: " + header_path.string());
    if (!fs::exists(payload_path)) throw VolumeIoError("missing payload file: " + payload_path.string());

    std::istringstream header(read_file(header_path));
    RawImage img;
    bool have_dims = false;
    bool have_spacing = false;
    std::string dtype;
    std::string line;
    while (std::getline(header, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw MalformedHeader("header line without '=': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "dims") {
                const auto p = split_commas(value);
                if (p.size() != 3) throw MalformedHeader("dims needs three entries");
                img.dims = {std::stoi(p[0]), std::stoi(p[1]), std::stoi(p[2])};
                have_dims = true;
            } else if (key == "spacing") {
                const auto p = split_commas(value);
                if (p.size() != 3) throw MalformedHeader("spacing needs three entries");
                img.spacing = {std::stod(p[0]), std::stod(p[1]), std::stod(p[2])};
                have_spacing = true;
            } else if (key == "dtype") {
                dtype = value;
            } else if (key == "channels") {
                img.channels = std::stoi(value);
            } else {
                throw MalformedHeader("unknown header key: " + key);
            }
        } catch (const std::logic_error&) {
            throw MalformedHeader("cannot parse header value for '" + key + "': " + value);
        }
    }
    if (!have_dims || !have_spacing || dtype.empty()) {
        throw MalformedHeader("header must declare dims, spacing and dtype: " + header_path.string());
    }
    if (!img.dims.positive() || img.channels <= 0) throw MalformedHeader("non-positive dims or channels");
    if (!(img.spacing.sx > 0 && img.spacing.sy > 0 && img.spacing.sz > 0)) {
        throw MalformedHeader("non-positive spacing");
    }

    std::size_t scalar_size = 0;
    if (dtype == "float32") {
        scalar_size = 4;
    } else if (dtype == "float64") {
        scalar_size = 8;
    } else {
        throw UnsupportedScalarType("unsupported dtype: " + dtype);
    }

    const std::string bytes = read_file(payload_path);
    const std::size_t count = img.dims.size() * static_cast<std::size_t>(img.channels);
    if (bytes.size() != count * scalar_size) {
        throw SizeMismatch("payload has " + std::to_string(bytes.size()) + " bytes, header implies " +
                           std::to_string(count * scalar_size));
    }
    img.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (scalar_size == 4) {
            img.data[i] = read_at<float>(bytes, i * 4, !kHostLittle);
        } else {
            img.data[i] = read_at<double>(bytes, i * 8, !kHostLittle);
        }
    }
    return img;
}

void save_raw(const RawImage& image, const fs::path& path) {
    const auto [payload_path, header_path] = raw_paths(path);
    const bool f32 = float32_lossless(image.data);

    std::string payload;
    payload.reserve(image.data.size() * (f32 ? 4 : 8));
    for (double v : image.data) {
        if (f32) {
            append_le(payload, static_cast<float>(v));
        } else {
            append_le(payload, v);
        }
    }

    std::ostringstream header;
    header << "dims=" << image.dims.nx << "," << image.dims.ny << "," << image.dims.nz << "\n";
    header << "spacing=" << format_double(image.spacing.sx) << "," << format_double(image.spacing.sy) << ","
           << format_double(image.spacing.sz) << "\n";
    header << "dtype=" << (f32 ? "float32" : "float64") << "\n";
    if (image.channels != 1) header << "channels=" << image.channels << "\n";

    write_file_atomic(payload_path, payload);
    write_file_atomic(header_path, header.str());
}

// ---------------------------------------------------------------------------
// NIfTI-1, single file, read-only subset.

namespace {

constexpr std::size_t kNiftiHeaderSize = 348;

Volume load_nifti(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
        static_cast<unsigned char>(bytes[1]) == 0x8b) {
        throw UnsupportedFeature("compressed NIfTI is not supported: " + path.string());
    }
    if (bytes.size() < kNiftiHeaderSize) throw MalformedHeader("NIfTI file shorter than its header");

    bool swap = false;
    const auto sizeof_hdr = read_at<std::int32_t>(bytes, 0, false);
    if (sizeof_hdr != 348) {
        if (byteswap_value(sizeof_hdr) == 348) {
            swap = true;
        } else {
            throw MalformedHeader("sizeof_hdr is not 348");
        }
    }
    if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
        if (std::memcmp(bytes.data() + 344, "ni1\0", 4) == 0) {
            throw UnsupportedFeature("two-file NIfTI (.hdr/.img) is not supported");
        }
        throw MalformedHeader("bad NIfTI magic");
    }

    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = read_at<std::int16_t>(bytes, 40 + 2 * i, swap);
    if (dim[0] < 3 || dim[0] > 7) throw MalformedHeader("dim[0] must describe a 3D volume");
    for (int i = 4; i <= dim[0]; ++i) {
        if (dim[i] != 1) throw UnsupportedFeature("NIfTI volumes beyond 3D are not supported");
    }
    const Dims dims{dim[1], dim[2], dim[3]};
    if (!dims.positive()) throw MalformedHeader("non-positive NIfTI dims");

    const auto datatype = read_at<std::int16_t>(bytes, 70, swap);
    std::size_t scalar_size = 0;
    if (datatype == 4) {
        scalar_size = 2;
    } else if (datatype == 16) {
        scalar_size = 4;
    } else {
        throw UnsupportedScalarType("unsupported NIfTI datatype " + std::to_string(datatype));
    }

    float pixdim[8];
    for (int i = 0; i < 8; ++i) pixdim[i] = read_at<float>(bytes, 76 + 4 * i, swap);
    const Spacing spacing{pixdim[1], pixdim[2], pixdim[3]};
    if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) throw MalformedHeader("non-positive pixdim");

    const auto vox_offset = read_at<float>(bytes, 108, swap);
    const auto scl_slope = read_at<float>(bytes, 112, swap);
    const auto scl_inter = read_at<float>(bytes, 116, swap);

    const auto qform_code = read_at<std::int16_t>(bytes, 252, swap);
    const auto sform_code = read_at<std::int16_t>(bytes, 254, swap);
    if (sform_code > 0) {
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) {
                if (row == col) continue;
                if (read_at<float>(bytes, 280 + 16 * row + 4 * col, swap) != 0.0f) {
                    throw UnsupportedFeature("NIfTI sform with shear or rotation is not supported");
                }
            }
        }
    } else if (qform_code > 0) {
        for (int i = 0; i < 3; ++i) {
            if (read_at<float>(bytes, 256 + 4 * i, swap) != 0.0f) {
                throw UnsupportedFeature("NIfTI qform rotation is not supported");
            }
        }
    }

    if (!(vox_offset >= 348.0f) || std::floor(vox_offset) != vox_offset) {
        throw MalformedHeader("invalid vox_offset");
    }
    const auto offset = static_cast<std::size_t>(vox_offset);
    const std::size_t count = dims.size();
    if (bytes.size() < offset || bytes.size() - offset < count * scalar_size) {
        throw SizeMismatch("NIfTI payload shorter than dims imply");
    }

    const bool scaled = scl_slope != 0.0f && !(scl_slope == 1.0f && scl_inter == 0.0f);
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        double v = 0.0;
        if (scalar_size == 2) {
            v = read_at<std::int16_t>(bytes, offset + 2 * i, swap);
        } else {
            v = read_at<float>(bytes, offset + 4 * i, swap);
        }
        if (scaled) v = static_cast<double>(scl_slope) * v + static_cast<double>(scl_inter);
        data[i] = v;
    }
    return Volume(dims, spacing, std::move(data));
}

}  // namespace

Volume load_volume(const fs::path& path, VolumeFormat format) {
    if (format == VolumeFormat::kNifti1) return load_nifti(path);
    RawImage img = load_raw(path);
    if (img.channels != 1) {
        throw UnsupportedFeature("expected a single-channel volume, found " + std::to_string(img.channels) +
                                 " channels in " + path.string());
    }
    return Volume(img.dims, img.spacing, std::move(img.data));
}

Volume load_volume(const fs::path& path) {
    const auto ext = path.extension();
    if (ext == ".nii") return load_volume(path, VolumeFormat::kNifti1);
    if (ext == ".gz") throw UnsupportedFeature("compressed NIfTI is not supported: " + path.string());
    return load_volume(path, VolumeFormat::kRaw);
}

void save_volume(const Volume& v, const fs::path& path) {
    save_raw(RawImage{v.dims(), v.spacing(), 1, v.data()}, path);
}

LabelMask load_label_mask(const fs::path& path) { return to_label_mask(load_volume(path)); }

void save_label_mask(const LabelMask& m, const fs::path& path) { save_volume(to_volume(m), path); }

}  // namespace gradreg
