// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

namespace spectre::svg {

using Attrs = std::vector<std::pair<std::string, std::string>>;

std::string escape(std::string_view text);

/// Fixed two-decimal rendering for coordinates.
std::string num(double v);

/// Streaming writer for one standalone SVG 1.1 document.
class Document {
public:
    Document(int width, int height, const std::string& plot, const std::string& title);

    void open(const std::string& tag, const Attrs& attrs, const std::string& tooltip = {});
    void close();
    /// Leaf element; gets a <title> child when `tooltip` is non-empty.
    void element(const std::string& tag, const Attrs& attrs, const std::string& tooltip = {});
    void text(double x, double y, const std::string& content, Attrs attrs = {});

    std::string finish();

private:
    void indent();
    void write_open(const std::string& tag, const Attrs& attrs);

    std::string out_;
    std::vector<std::string> stack_;
};

/// Tick step and rounded-up top for an axis covering [0, max].
struct Axis {
    double top = 1;
    double step = 1;
};
Axis nice_axis(double max, int ticks = 5);

}  // namespace spectre::svg
