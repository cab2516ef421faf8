#include "ript/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint/feature formats are little-endian");

namespace ript {

namespace detail_io {

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& in, const std::string& path) {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw FormatError(path + ": truncated archive");
    }
    return v;
}

}  // namespace detail_io
using detail_io::read_u32;
using detail_io::write_u32;

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const ad::Tensor<double>*>>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        write_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<uint32_t>(tensor->shape.size()));
        for (int d : tensor->shape) write_u32(out, static_cast<uint32_t>(d));
        std::vector<float> vals(tensor->values.size());
        for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<float>(tensor->values[i]);
        out.write(reinterpret_cast<const char*>(vals.data()),
                  static_cast<std::streamsize>(vals.size() * sizeof(float)));
    }
    if (!out) throw DataError("write failed for " + path);
}

std::map<std::string, ad::Tensor<double>> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw FormatError(path + ": not a checkpoint archive");
    }
    const uint32_t version = read_u32(in, path);
    if (version != kCheckpointVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const uint32_t count = read_u32(in, path);
    std::map<std::string, ad::Tensor<double>> out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw FormatError(path + ": truncated archive");
        const uint32_t rank = read_u32(in, path);
        std::vector<int> shape(rank);
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(read_u32(in, path));
            numel *= static_cast<size_t>(shape[d]);
        }
        std::vector<float> vals(numel);
        if (!in.read(reinterpret_cast<char*>(vals.data()),
                     static_cast<std::streamsize>(numel * sizeof(float)))) {
            throw FormatError(path + ": truncated archive");
        }
        ad::Tensor<double> t;
        t.shape = std::move(shape);
        t.values.resize(numel);
        for (size_t j = 0; j < numel; ++j) t.values[j] = static_cast<double>(vals[j]);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

void save_features(const std::string& path, const std::vector<Eigen::VectorXd>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    const uint32_t count = static_cast<uint32_t>(rows.size());
    const uint32_t dim = rows.empty() ? 0 : static_cast<uint32_t>(rows[0].size());
    write_u32(out, count);
    write_u32(out, dim);
    for (const Eigen::VectorXd& r : rows) {
        if (static_cast<uint32_t>(r.size()) != dim) {
            throw ArgumentError("save_features: inconsistent row widths");
        }
        for (uint32_t c = 0; c < dim; ++c) {
            float v = static_cast<float>(r[c]);
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
    }
    if (!out) throw DataError("write failed for " + path);
}

std::vector<Eigen::VectorXd> load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open feature file " + path);
    const uint32_t count = read_u32(in, path);
    const uint32_t dim = read_u32(in, path);
    std::vector<Eigen::VectorXd> rows(count, Eigen::VectorXd(dim));
    for (uint32_t r = 0; r < count; ++r) {
        for (uint32_t c = 0; c < dim; ++c) {
            float v;
            if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
                throw FormatError(path + ": truncated feature file");
            }
            rows[r][c] = static_cast<double>(v);
        }
    }
    return rows;
}

}  // namespace ript

namespace ript {

void append_token_set(std::ostream& out, const TokenSet& set) {
    const uint32_t t = static_cast<uint32_t>(set.token_points.size());
    const uint32_t d = static_cast<uint32_t>(set.token_feats.cols());
    if (set.token_feats.rows() != static_cast<int>(t)) {
        throw ArgumentError("append_token_set: point/feature count mismatch");
    }
    write_u32(out, t);
    write_u32(out, d);
    auto put = [&](double v) {
        float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
    };
    for (const Vec3& p : set.token_points) {
        put(p.x());
        put(p.y());
        put(p.z());
    }
    for (uint32_t r = 0; r < t; ++r)
        for (uint32_t c = 0; c < d; ++c) put(set.token_feats(r, c));
}

std::vector<TokenSet> load_token_sets(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open token file " + path);
    std::vector<TokenSet> sets;
    while (in.peek() != EOF) {
        const uint32_t t = read_u32(in, path);
        const uint32_t d = read_u32(in, path);
        TokenSet set;
        set.token_points.resize(t);
        set.token_feats.resize(t, d);
        set.degenerate.assign(t, 0);
        auto get = [&]() {
            float f;
            if (!in.read(reinterpret_cast<char*>(&f), sizeof f)) {
                throw FormatError(path + ": truncated token record");
            }
            return static_cast<double>(f);
        };
        for (uint32_t i = 0; i < t; ++i) {
            const double x = get();
            const double y = get();
            const double z = get();
            set.token_points[i] = Vec3(x, y, z);
        }
        for (uint32_t r = 0; r < t; ++r)
            for (uint32_t c = 0; c < d; ++c) set.token_feats(r, c) = get();
        sets.push_back(std::move(set));
    }
    return sets;
}

}  // namespace ript
