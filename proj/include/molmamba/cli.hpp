#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "molmamba/molgraph.hpp"

namespace molmamba {

/// Reads a molecule file, fills in synthetic descriptors where a record has
/// none and normalizes the descriptor rows over the whole file.
std::vector<Molecule> load_corpus(const std::filesystem::path& path, bool lenient, std::ostream& log);
/// Same post-processing for molecules already in memory.
std::vector<Molecule> with_descriptors(std::vector<Molecule> mols);

/// Lower-case hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

/// Command-line entry point. Returns 0 on success, 1 on invalid input or
/// usage, 2 on numeric or runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace molmamba
