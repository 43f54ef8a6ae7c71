#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace metrik {

/// Content-addressed artifact store under `<root>/objects`, with a key index
/// under `<root>/index` used to resume interrupted runs.
///
/// Objects are immutable files named by a hash of their bytes, so re-storing
/// identical content is a no-op and two runs with the same inputs produce the
/// same object ids. Index entries map a caller-chosen key (typically a hash of
/// the configuration, dataset fingerprint and task label) to an object id;
/// writes go through a temp file plus rename so a crashed run never leaves a
/// truncated entry behind.
/// Object id a store will assign to these bytes: content hash, length and
/// extension. Pure, so ids can be computed before (or without) storing.
std::string artifact_id(const std::string& bytes, const std::string& extension);

class ArtifactStore {
public:
    explicit ArtifactStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }

    /// Stores `bytes` and returns the object id. `extension` (for example
    /// ".ckpt" or ".json") becomes part of the id so the on-disk name keeps a
    /// recognizable suffix.
    std::string put(const std::string& bytes, const std::string& extension);

    bool contains(const std::string& id) const;
    std::filesystem::path path_of(const std::string& id) const;
    std::string get(const std::string& id) const;

    /// Associates `key` with an object id. Keys are free-form strings; they
    /// are hashed to form the index file name.
    void map_key(const std::string& key, const std::string& id);
    std::optional<std::string> lookup(const std::string& key) const;

private:
    std::filesystem::path root_;
};

/// Reads a whole file into a string. Throws std::runtime_error when the file
/// cannot be opened.
std::string read_file_bytes(const std::filesystem::path& path);

/// Writes bytes via a sibling temp file and an atomic rename.
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace metrik
