#include "sparsecot/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sparsecot/errors.hpp"

namespace sparsecot {

namespace {

constexpr const char *kMagic = "sparsecot-checkpoint v1";

void write_double_le(std::ostream &out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    }
    out.write(bytes, 8);
}

double read_double_le(std::istream &in) {
    char bytes[8];
    in.read(bytes, 8);
    if (!in) {
        throw IoError("checkpoint: truncated data section");
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

Tensor mask_as_tensor(const DimensionMask &mask) {
    Tensor t({mask.size()});
    for (std::size_t i = 0; i < mask.size(); ++i) {
        t(i) = static_cast<double>(mask.bits[i]);
    }
    return t;
}

} // namespace

void save_checkpoint(const std::string &path, const ModelParams &params, std::size_t step) {
    auto &mutable_params = const_cast<ModelParams &>(params);
    auto tensors = named_tensors(mutable_params);
    Tensor mask = mask_as_tensor(params.dim_mask);
    tensors.emplace_back("dim_mask", &mask);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw IoError("checkpoint: cannot open '" + tmp + "' for writing");
        }
        out << kMagic << "\n";
        out << "step " << step << "\n";
        for (const auto &[name, tensor] : tensors) {
            out << "tensor " << name;
            for (std::size_t d : tensor->shape()) {
                out << " " << d;
            }
            out << "\n";
        }
        out << "data\n";
        for (const auto &[name, tensor] : tensors) {
            for (double v : tensor->data()) {
                write_double_le(out, v);
            }
        }
        if (!out) {
            throw IoError("checkpoint: write failed for '" + tmp + "'");
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw IoError("checkpoint: cannot rename '" + tmp + "' to '" + path + "'");
    }
}

LoadedCheckpoint load_checkpoint(const std::string &path, const ModelConfig &config) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("checkpoint: cannot open '" + path + "'");
    }
    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
        throw IoError("checkpoint: bad magic line in '" + path + "'");
    }

    LoadedCheckpoint out;
    out.params = init_params(config);
    auto tensors = named_tensors(out.params);
    Tensor mask = mask_as_tensor(out.params.dim_mask);
    tensors.emplace_back("dim_mask", &mask);

    std::size_t next = 0;
    while (std::getline(in, line)) {
        if (line == "data") {
            break;
        }
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "step") {
            ls >> out.step;
            continue;
        }
        if (tag != "tensor") {
            throw IoError("checkpoint: unexpected header line '" + line + "'");
        }
        std::string name;
        ls >> name;
        std::vector<std::size_t> shape;
        std::size_t d;
        while (ls >> d) {
            shape.push_back(d);
        }
        if (next >= tensors.size()) {
            throw IoError("checkpoint: more tensors than the config expects at '" + name + "'");
        }
        const auto &[expect_name, tensor] = tensors[next];
        if (name != expect_name || shape != tensor->shape()) {
            throw IoError("checkpoint: tensor '" + name + "' " + shape_str(shape) +
                          " does not match expected '" + expect_name + "' " +
                          tensor->shape_str());
        }
        ++next;
    }
    if (next != tensors.size()) {
        throw IoError("checkpoint: header lists " + std::to_string(next) + " tensors, expected " +
                      std::to_string(tensors.size()));
    }
    for (auto &[name, tensor] : tensors) {
        for (double &v : tensor->data()) {
            v = read_double_le(in);
        }
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
        out.params.dim_mask.bits[i] = mask(i) != 0.0 ? 1 : 0;
    }
    return out;
}

} // namespace sparsecot
