#include "metrik/store.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "metrik/rng.hpp"

namespace metrik {
namespace {

std::string hex16(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf);
}

}  // namespace

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

ArtifactStore::ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "objects");
    std::filesystem::create_directories(root_ / "index");
}

std::string artifact_id(const std::string& bytes, const std::string& extension) {
    // Appending the length guards the 64-bit hash against same-hash,
    // different-length collisions.
    return hex16(fnv1a64(bytes)) + "-" + std::to_string(bytes.size()) + extension;
}

std::string ArtifactStore::put(const std::string& bytes, const std::string& extension) {
    std::string id = artifact_id(bytes, extension);
    std::filesystem::path target = root_ / "objects" / id;
    if (!std::filesystem::exists(target)) write_file_bytes(target, bytes);
    return id;
}

bool ArtifactStore::contains(const std::string& id) const {
    return std::filesystem::exists(root_ / "objects" / id);
}

std::filesystem::path ArtifactStore::path_of(const std::string& id) const {
    return root_ / "objects" / id;
}

std::string ArtifactStore::get(const std::string& id) const {
    return read_file_bytes(path_of(id));
}

void ArtifactStore::map_key(const std::string& key, const std::string& id) {
    write_file_bytes(root_ / "index" / (hex16(fnv1a64(key)) + ".key"), id);
}

std::optional<std::string> ArtifactStore::lookup(const std::string& key) const {
    std::filesystem::path entry = root_ / "index" / (hex16(fnv1a64(key)) + ".key");
    if (!std::filesystem::exists(entry)) return std::nullopt;
    std::string id = read_file_bytes(entry);
    if (!contains(id)) return std::nullopt;
    return id;
}

}  // namespace metrik
