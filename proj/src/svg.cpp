// SPDX-License-Identifier: Apache-2.0
#include "svg.hpp"

#include <cmath>
#include <cstdio>

namespace spectre::svg {

std::string escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default:
                // XML 1.0 forbids most control characters outright
                if (static_cast<unsigned char>(c) < 0x20 && c != '\t' && c != '\n' && c != '\r')
                    out += '?';
                else
                    out += c;
        }
    }
    return out;
}

std::string num(double v) {
    if (std::fabs(v) < 0.005) v = 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

Document::Document(int width, int height, const std::string& plot, const std::string& title) {
    out_ = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    write_open("svg", {{"xmlns", "http://www.w3.org/2000/svg"},
                       {"version", "1.1"},
                       {"width", std::to_string(width)},
                       {"height", std::to_string(height)},
                       {"viewBox", "0 0 " + std::to_string(width) + " " + std::to_string(height)},
                       {"font-family", "sans-serif"},
                       {"class", "spectre-plot"},
                       {"data-plot", plot}});
    out_ += ">\n";
    stack_.push_back("svg");
    indent();
    out_ += "<title>" + escape(title) + "</title>\n";
    element("rect", {{"class", "background"},
                     {"x", "0"},
                     {"y", "0"},
                     {"width", std::to_string(width)},
                     {"height", std::to_string(height)},
                     {"fill", "#ffffff"}});
    text(width / 2.0, 32, title, {{"class", "plot-title"}, {"text-anchor", "middle"}, {"font-size", "20"}});
}

void Document::indent() { out_.append(stack_.size() * 2, ' '); }

void Document::write_open(const std::string& tag, const Attrs& attrs) {
    indent();
    out_ += "<" + tag;
    for (const auto& [k, v] : attrs) out_ += " " + k + "=\"" + escape(v) + "\"";
}

void Document::open(const std::string& tag, const Attrs& attrs, const std::string& tooltip) {
    write_open(tag, attrs);
    out_ += ">\n";
    stack_.push_back(tag);
    if (!tooltip.empty()) {
        indent();
        out_ += "<title>" + escape(tooltip) + "</title>\n";
    }
}

void Document::close() {
    std::string tag = stack_.back();
    stack_.pop_back();
    indent();
    out_ += "</" + tag + ">\n";
}

void Document::element(const std::string& tag, const Attrs& attrs, const std::string& tooltip) {
    write_open(tag, attrs);
    if (tooltip.empty()) {
        out_ += "/>\n";
    } else {
        out_ += "><title>" + escape(tooltip) + "</title></" + tag + ">\n";
    }
}

void Document::text(double x, double y, const std::string& content, Attrs attrs) {
    attrs.insert(attrs.begin(), {{"x", num(x)}, {"y", num(y)}});
    write_open("text", attrs);
    out_ += ">" + escape(content) + "</text>\n";
}

std::string Document::finish() {
    while (!stack_.empty()) close();
    return std::move(out_);
}

Axis nice_axis(double max, int ticks) {
    if (!(max > 0)) return {static_cast<double>(ticks), 1};
    double raw = max / ticks;
    double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double norm = raw / mag;
    double step = (norm <= 1 ? 1 : norm <= 2 ? 2 : norm <= 5 ? 5 : 10) * mag;
    if (step < 1) step = 1;
    return {step * std::ceil(max / step), step};
}

}  // namespace spectre::svg
