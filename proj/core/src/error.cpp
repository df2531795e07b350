#include "growth/error.hpp"

namespace growth {

FileNotFound::FileNotFound(const std::string& path)
    : Error("file not found: " + path), path_(path) {}

SchemaError::SchemaError(std::size_t row, std::string column,
                         std::string reason)
    : Error("row " + std::to_string(row) + ", column '" + column +
            "': " + reason),
      row_(row),
      column_(std::move(column)),
      reason_(std::move(reason)) {}

InsufficientPoints::InsufficientPoints(std::size_t have, std::size_t need)
    : Error("insufficient points: have " + std::to_string(have) + ", need " +
            std::to_string(need)),
      have_(have),
      need_(need) {}

}  // namespace growth
