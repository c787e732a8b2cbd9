// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "tpl/error.hpp"
#include "tpl/trace.hpp"

namespace tpl {

namespace {

const char* const kModule = "trace-io";

// Header documents larger than this are rejected before parsing.
constexpr std::uint32_t kMaxHeaderBytes = 1u << 16;

[[noreturn]] void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, kModule, message);
}

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for large payloads
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset),
                    static_cast<uInt>(chunk));
        offset += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", v);
    return buf;
}

void append_le32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

std::uint32_t load_le32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

void append_floats(std::string& out, const std::vector<float>& values) {
    for (float f : values) {
        append_le32(out, std::bit_cast<std::uint32_t>(f));
    }
}

std::vector<float> load_floats(std::string_view bytes, std::size_t count) {
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = std::bit_cast<float>(load_le32(bytes.data() + 4 * i));
    }
    return out;
}

std::string payload_declaration(bool has_hidden) {
    return has_hidden ? "last_text_rows,last_visual_rows,hidden_states"
                      : "last_text_rows,last_visual_rows";
}

// Checked a*b for sizes read from untrusted headers.
std::uint64_t mul_checked(std::uint64_t a, std::uint64_t b) {
    std::uint64_t r = 0;
    if (__builtin_mul_overflow(a, b, &r)) {
        fail(ErrorKind::format, "header sizes overflow");
    }
    return r;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    const char* first = value.data();
    const char* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (value.empty() || ec != std::errc{} || ptr != last) {
        fail(ErrorKind::format, "header field '" + key + "' is not an unsigned integer: '" + value +
                                    "'");
    }
    return v;
}

}  // namespace

std::string_view to_string(QueryReduction q) {
    return q == QueryReduction::last_token ? "last_token" : "mean_all_rows";
}

QueryReduction parse_query_reduction(std::string_view s) {
    if (s == "last_token") return QueryReduction::last_token;
    if (s == "mean_all_rows") return QueryReduction::mean_all_rows;
    throw Error(ErrorKind::format, kModule, "unknown query_reduction '" + std::string(s) + "'");
}

std::span<const float> AttentionTrace::last_text_row(std::size_t layer) const {
    return std::span<const float>(last_text_rows).subspan(layer * layout.seq_len, layout.seq_len);
}

std::span<const float> AttentionTrace::last_visual_row(std::size_t layer) const {
    return std::span<const float>(last_visual_rows).subspan(layer * layout.seq_len, layout.seq_len);
}

std::vector<Violation> validate_trace(const AttentionTrace& t) {
    std::vector<Violation> out;
    for (auto& msg : t.layout.violations()) {
        out.push_back({"layout", std::move(msg)});
    }
    const bool layout_ok = out.empty();
    if (t.num_layers == 0) out.push_back({"num_layers", "must be >= 1"});
    if (t.num_heads == 0) out.push_back({"num_heads", "must be >= 1"});
    if (t.model.hidden == 0 || t.model.intermediate == 0 || t.model.layers == 0 ||
        t.model.kv_bytes_per_elem == 0 || t.model.heads == 0) {
        out.push_back({"model_dims", "all model dimensions must be positive"});
    }
    if (t.model.heads != t.num_heads) {
        out.push_back({"model_dims", "model heads " + std::to_string(t.model.heads) +
                                         " differ from num_heads " + std::to_string(t.num_heads)});
    }
    if (t.model.layers < t.num_layers) {
        out.push_back({"model_dims", "trace has more layers than the model"});
    }

    const std::size_t L = t.layout.seq_len;
    const std::size_t expected = t.num_layers * L;
    bool rows_sized = true;
    if (t.last_text_rows.size() != expected) {
        out.push_back({"last_text_rows", "expected " + std::to_string(expected) + " values, found " +
                                             std::to_string(t.last_text_rows.size())});
        rows_sized = false;
    }
    if (t.last_visual_rows.size() != expected) {
        out.push_back({"last_visual_rows", "expected " + std::to_string(expected) +
                                               " values, found " +
                                               std::to_string(t.last_visual_rows.size())});
        rows_sized = false;
    }

    auto check_row = [&](std::span<const float> row, std::size_t causal_end,
                         const std::string& where) {
        double sum = 0.0;
        for (std::size_t i = 0; i < row.size(); ++i) {
            const float v = row[i];
            if (!std::isfinite(v) || v < 0.0f) {
                out.push_back({where, "entry " + std::to_string(i) + " is negative or non-finite"});
                return;
            }
            if (i >= causal_end && v != 0.0f) {
                out.push_back({where, "entry " + std::to_string(i) +
                                          " lies past the causal prefix but is nonzero"});
                return;
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance) {
            std::ostringstream msg;
            msg << "row sums to " << sum << ", expected 1 +- " << kRowSumTolerance;
            out.push_back({where, msg.str()});
        }
    };

    if (layout_ok && rows_sized) {
        for (std::size_t layer = 0; layer < t.num_layers; ++layer) {
            check_row(t.last_text_row(layer), L,
                      "last_text_row[layer " + std::to_string(layer) + "]");
            check_row(t.last_visual_row(layer), t.layout.image_end,
                      "last_visual_row[layer " + std::to_string(layer) + "]");
        }
    }

    if (t.hidden) {
        const auto& h = *t.hidden;
        if (h.dim != t.model.hidden) {
            out.push_back({"hidden_states", "dim " + std::to_string(h.dim) +
                                                " does not match model hidden " +
                                                std::to_string(t.model.hidden)});
        }
        if (h.layer > t.num_layers) {
            out.push_back({"hidden_states", "layer " + std::to_string(h.layer) +
                                                " beyond captured layers"});
        }
        if (h.values.size() != L * h.dim) {
            out.push_back({"hidden_states", "expected " + std::to_string(L * h.dim) +
                                                " values, found " + std::to_string(h.values.size())});
        } else {
            for (float v : h.values) {
                if (!std::isfinite(v)) {
                    out.push_back({"hidden_states", "non-finite entry"});
                    break;
                }
            }
        }
    }
    return out;
}

std::size_t write_trace(const AttentionTrace& trace, std::ostream& sink) {
    const auto violations = validate_trace(trace);
    if (!violations.empty()) {
        fail(ErrorKind::validation,
             "refusing to write invalid trace: " + violations.front().where + ": " +
                 violations.front().what);
    }

    std::string payload;
    payload.reserve(4 * (trace.last_text_rows.size() * 2 +
                         (trace.hidden ? trace.hidden->values.size() : 0)));
    append_floats(payload, trace.last_text_rows);
    append_floats(payload, trace.last_visual_rows);
    if (trace.hidden) {
        append_floats(payload, trace.hidden->values);
    }

    const auto& lay = trace.layout;
    std::ostringstream h;
    h << "format=" << kTraceFormat << '\n'
      << "seq_len=" << lay.seq_len << '\n'
      << "image_start=" << lay.image_start << '\n'
      << "image_end=" << lay.image_end << '\n'
      << "grid_h=" << lay.grid_h << '\n'
      << "grid_w=" << lay.grid_w << '\n'
      << "num_layers=" << trace.num_layers << '\n'
      << "num_heads=" << trace.num_heads << '\n'
      << "query_reduction=" << to_string(trace.query_reduction) << '\n'
      << "model_hidden=" << trace.model.hidden << '\n'
      << "model_intermediate=" << trace.model.intermediate << '\n'
      << "model_layers=" << trace.model.layers << '\n'
      << "kv_bytes_per_elem=" << trace.model.kv_bytes_per_elem << '\n'
      << "hidden_layer=" << (trace.hidden ? std::to_string(trace.hidden->layer) : "none") << '\n'
      << "hidden_dim=" << (trace.hidden ? trace.hidden->dim : 0) << '\n'
      << "payload=" << payload_declaration(trace.hidden.has_value()) << '\n'
      << "payload_bytes=" << payload.size() << '\n'
      << "payload_crc32=" << hex32(crc32_of(payload)) << '\n';
    std::string header = h.str();
    header += "header_crc32=" + hex32(crc32_of(header)) + '\n';

    std::string prefix;
    append_le32(prefix, static_cast<std::uint32_t>(header.size()));
    sink.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
    sink.write(header.data(), static_cast<std::streamsize>(header.size()));
    sink.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!sink) {
        fail(ErrorKind::io, "write failed");
    }
    return prefix.size() + header.size() + payload.size();
}

std::size_t write_trace_file(const AttentionTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    }
    const std::size_t n = write_trace(trace, out);
    out.close();
    if (!out) {
        fail(ErrorKind::io, "cannot finish writing '" + path.string() + "'");
    }
    return n;
}

AttentionTrace read_trace_unvalidated(std::istream& source) {
    std::string bytes((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
    if (source.bad()) {
        fail(ErrorKind::io, "read failed");
    }
    if (bytes.size() < 4) {
        fail(ErrorKind::truncated, "file shorter than the header length prefix");
    }
    const std::uint32_t header_len = load_le32(bytes.data());
    if (header_len > kMaxHeaderBytes) {
        fail(ErrorKind::format, "header length " + std::to_string(header_len) + " is implausible");
    }
    if (bytes.size() - 4 < header_len) {
        fail(ErrorKind::truncated, "header truncated");
    }
    const std::string_view header(bytes.data() + 4, header_len);
    const std::string_view payload(bytes.data() + 4 + header_len, bytes.size() - 4 - header_len);

    const std::string format_line = "format=" + std::string(kTraceFormat) + "\n";
    if (!header.starts_with(format_line)) {
        const auto eol = header.find('\n');
        fail(ErrorKind::version, "unknown format version line '" +
                                     std::string(header.substr(0, std::min<std::size_t>(eol, 64))) +
                                     "'");
    }
    if (header.empty() || header.back() != '\n') {
        fail(ErrorKind::format, "header does not end with a newline");
    }
    const auto crc_pos = header.rfind('\n', header.size() - 2);
    if (crc_pos == std::string_view::npos) {
        fail(ErrorKind::format, "header has no header_crc32 line");
    }
    const std::string_view crc_line = header.substr(crc_pos + 1, header.size() - crc_pos - 2);
    if (!crc_line.starts_with("header_crc32=")) {
        fail(ErrorKind::format, "header does not end with header_crc32");
    }
    if (std::string(crc_line.substr(13)) != hex32(crc32_of(header.substr(0, crc_pos + 1)))) {
        fail(ErrorKind::checksum, "header checksum mismatch");
    }

    std::map<std::string, std::string> fields;
    std::size_t pos = 0;
    while (pos < crc_pos + 1) {
        const auto eol = header.find('\n', pos);
        const std::string_view line = header.substr(pos, eol - pos);
        pos = eol + 1;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos || eq == 0) {
            fail(ErrorKind::format, "malformed header line '" + std::string(line) + "'");
        }
        std::string key(line.substr(0, eq));
        if (!fields.emplace(key, std::string(line.substr(eq + 1))).second) {
            fail(ErrorKind::format, "duplicate header field '" + key + "'");
        }
    }
    static const char* const kRequired[] = {
        "format",       "seq_len",           "image_start",  "image_end",         "grid_h",
        "grid_w",       "num_layers",        "num_heads",    "query_reduction",   "model_hidden",
        "model_intermediate", "model_layers", "kv_bytes_per_elem", "hidden_layer", "hidden_dim",
        "payload",      "payload_bytes",     "payload_crc32"};
    for (const char* key : kRequired) {
        if (!fields.count(key)) {
            fail(ErrorKind::format, std::string("missing header field '") + key + "'");
        }
    }
    if (fields.size() != std::size(kRequired)) {
        fail(ErrorKind::format, "unexpected header fields");
    }

    auto num = [&](const char* key) { return parse_u64(key, fields.at(key)); };
    AttentionTrace t;
    t.layout.seq_len = num("seq_len");
    t.layout.image_start = num("image_start");
    t.layout.image_end = num("image_end");
    t.layout.grid_h = num("grid_h");
    t.layout.grid_w = num("grid_w");
    t.num_layers = num("num_layers");
    t.num_heads = num("num_heads");
    t.query_reduction = parse_query_reduction(fields.at("query_reduction"));
    t.model.hidden = num("model_hidden");
    t.model.intermediate = num("model_intermediate");
    t.model.layers = num("model_layers");
    t.model.kv_bytes_per_elem = num("kv_bytes_per_elem");
    t.model.heads = t.num_heads;

    const bool has_hidden = fields.at("hidden_layer") != "none";
    const std::uint64_t hidden_dim = num("hidden_dim");
    if (!has_hidden && hidden_dim != 0) {
        fail(ErrorKind::format, "hidden_dim set without hidden_layer");
    }
    if (fields.at("payload") != payload_declaration(has_hidden)) {
        fail(ErrorKind::format, "unexpected payload declaration '" + fields.at("payload") + "'");
    }

    const std::uint64_t row_values = mul_checked(t.num_layers, t.layout.seq_len);
    const std::uint64_t hidden_values = has_hidden ? mul_checked(t.layout.seq_len, hidden_dim) : 0;
    std::uint64_t total_values = 0;
    if (__builtin_add_overflow(mul_checked(row_values, 2), hidden_values, &total_values)) {
        fail(ErrorKind::format, "header sizes overflow");
    }
    const std::uint64_t expected_bytes = mul_checked(total_values, 4);
    if (num("payload_bytes") != expected_bytes) {
        fail(ErrorKind::format, "payload_bytes disagrees with the declared shapes");
    }
    if (payload.size() < expected_bytes) {
        fail(ErrorKind::truncated, "payload truncated: expected " + std::to_string(expected_bytes) +
                                       " bytes, found " + std::to_string(payload.size()));
    }
    if (payload.size() > expected_bytes) {
        fail(ErrorKind::format, "trailing bytes after payload");
    }
    if (fields.at("payload_crc32") != hex32(crc32_of(payload))) {
        fail(ErrorKind::checksum, "payload checksum mismatch");
    }

    t.last_text_rows = load_floats(payload, row_values);
    t.last_visual_rows = load_floats(payload.substr(4 * row_values), row_values);
    if (has_hidden) {
        HiddenStates hs;
        hs.layer = parse_u64("hidden_layer", fields.at("hidden_layer"));
        hs.dim = hidden_dim;
        hs.values = load_floats(payload.substr(8 * row_values), hidden_values);
        t.hidden = std::move(hs);
    }
    return t;
}

AttentionTrace read_trace(std::istream& source) {
    AttentionTrace t = read_trace_unvalidated(source);
    const auto violations = validate_trace(t);
    if (!violations.empty()) {
        std::string msg = "trace violates " + std::to_string(violations.size()) + " invariant(s); ";
        msg += violations.front().where + ": " + violations.front().what;
        fail(ErrorKind::validation, msg);
    }
    return t;
}

AttentionTrace read_trace_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "cannot open '" + path.string() + "'");
    }
    return read_trace(in);
}

}  // namespace tpl
