#include "cddsa/model/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cddsa/core/errors.hpp"

namespace cddsa::checkpoint {

using nlohmann::json;

const nn::Array<float>* Archive::find(const std::string& name) const {
    for (const auto& [n, a] : tensors)
        if (n == name) return &a;
    return nullptr;
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
    json header;
    header["format_version"] = kFormatVersion;
    header["meta"] = archive.meta;
    header["tensors"] = json::array();
    for (const auto& [name, arr] : archive.tensors)
        header["tensors"].push_back({{"name", name}, {"shape", arr.shape}});
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = header_str.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, arr] : archive.tensors)
        os.write(reinterpret_cast<const char*>(arr.ptr()),
                 static_cast<std::streamsize>(arr.numel() * sizeof(float)));
    if (!os) throw DataError("short write while saving checkpoint: " + path.string());
}

Archive load_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file (bad magic): " + path.string());
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header_str(len, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(len));
    if (!is) throw DataError("truncated checkpoint header: " + path.string());

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint header: " + std::string(e.what()));
    }
    if (header.at("format_version").get<int>() != kFormatVersion)
        throw DataError("unsupported checkpoint format version");

    Archive out;
    out.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const nn::Shape shape = t.at("shape").get<nn::Shape>();
        nn::Array<float> arr(shape);
        is.read(reinterpret_cast<char*>(arr.ptr()),
                static_cast<std::streamsize>(arr.numel() * sizeof(float)));
        if (!is) throw DataError("truncated checkpoint payload at tensor " + name);
        out.tensors.emplace_back(name, std::move(arr));
    }
    return out;
}

}  // namespace cddsa::checkpoint
