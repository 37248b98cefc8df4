#pragma once

// PhysioNet WFDB record reading: `.hea` headers, format 212/16 signal files
// and MIT-format `.atr` annotation streams.

#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecg/common.hpp"

namespace ecg::wfdb {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("header line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnsupportedFormatError : public std::runtime_error {
 public:
  explicit UnsupportedFormatError(int format)
      : std::runtime_error("unsupported WFDB storage format " + std::to_string(format) +
                           " (supported: 212, 16)"),
        format_(format) {}
  int format() const noexcept { return format_; }

 private:
  int format_;
};

class TruncatedDataError : public std::runtime_error {
 public:
  TruncatedDataError(std::size_t expected, std::size_t actual)
      : std::runtime_error("truncated signal payload: expected " + std::to_string(expected) +
                           " bytes, got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class AnnotationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultGain = 200.0;  // ADC units per mV

struct SignalSpec {
  std::string file;
  int format = 212;
  double gain = kDefaultGain;
  int baseline = 0;
  int adc_resolution = 12;
  int adc_zero = 0;
  int initial_value = 0;
  std::string description;
};

struct HeaderInfo {
  std::string record_id;
  double fs = 250.0;
  std::size_t n_samples = 0;
  std::vector<SignalSpec> signals;
};

struct ChannelInfo {
  std::string name;
  double gain = kDefaultGain;
  int baseline = 0;
};

struct Annotation {
  std::size_t sample = 0;
  std::string symbol;
};

struct EcgRecord {
  std::string record_id;
  double fs = 0.0;
  std::vector<ChannelInfo> channels;
  Matrix signal;  // n_samples x n_channels, millivolts
  std::vector<Annotation> annotations;

  std::size_t n_samples() const { return static_cast<std::size_t>(signal.rows()); }
  std::size_t n_channels() const { return static_cast<std::size_t>(signal.cols()); }

  Signal channel(std::size_t c) const {
    Signal out(n_samples());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = signal(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double to_double(const std::string& s, std::size_t line, const char* what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, std::string("invalid ") + what + " '" + s + "'");
  }
}

inline long long to_int(const std::string& s, std::size_t line, const char* what) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, std::string("invalid ") + what + " '" + s + "'");
  }
}

// Byte offset of the whitespace-delimited token `index` in `line`.
inline std::size_t token_offset(std::string_view line, std::size_t index) {
  std::size_t i = 0, seen = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    if (seen == index) return i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    ++seen;
  }
  return line.size();
}

}  // namespace detail

/// Parses a `.hea` header. Multi-segment records are rejected.
inline HeaderInfo parse_header(std::string_view text) {
  HeaderInfo info;
  std::size_t line_no = 0;
  bool have_record_line = false;
  std::size_t declared_signals = 0;

  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    auto tokens = detail::split_ws(line);
    if (tokens.empty() || tokens.front().front() == '#') {
      if (end == text.size()) break;
      continue;
    }

    if (!have_record_line) {
      have_record_line = true;
      const std::string& name = tokens[0];
      if (name.find('/') != std::string::npos)
        throw ParseError(line_no, "multi-segment records are not supported");
      info.record_id = name;
      if (tokens.size() < 2) throw ParseError(line_no, "missing signal count");
      const long long nsig = detail::to_int(tokens[1], line_no, "signal count");
      if (nsig <= 0) throw ParseError(line_no, "record declares no signals");
      declared_signals = static_cast<std::size_t>(nsig);
      if (tokens.size() >= 3) {
        // fs[/counter_freq[(base_counter)]]
        std::string fs_tok = tokens[2];
        fs_tok = fs_tok.substr(0, fs_tok.find_first_of("/("));
        info.fs = detail::to_double(fs_tok, line_no, "sampling frequency");
        if (!(info.fs > 0.0)) throw ParseError(line_no, "sampling frequency must be positive");
      }
      if (tokens.size() >= 4) {
        const long long ns = detail::to_int(tokens[3], line_no, "sample count");
        if (ns < 0) throw ParseError(line_no, "negative sample count");
        info.n_samples = static_cast<std::size_t>(ns);
      }
    } else if (info.signals.size() < declared_signals) {
      if (tokens.size() < 2) throw ParseError(line_no, "signal line needs file name and format");
      SignalSpec sig;
      sig.file = tokens[0];
      // format[xsamples_per_frame][:skew][+offset]
      std::string fmt = tokens[1];
      const auto cut = fmt.find_first_of("x:+");
      if (cut != std::string::npos) {
        if (fmt[cut] == 'x') throw ParseError(line_no, "multi-frequency signals are not supported");
        fmt = fmt.substr(0, cut);
      }
      sig.format = static_cast<int>(detail::to_int(fmt, line_no, "storage format"));
      if (sig.format != 212 && sig.format != 16) throw UnsupportedFormatError(sig.format);

      bool baseline_given = false;
      if (tokens.size() >= 3) {
        // gain[(baseline)][/units]
        std::string g = tokens[2];
        const auto slash = g.find('/');
        if (slash != std::string::npos) g = g.substr(0, slash);
        const auto paren = g.find('(');
        if (paren != std::string::npos) {
          const auto close = g.find(')', paren);
          if (close == std::string::npos) throw ParseError(line_no, "unterminated baseline");
          sig.baseline = static_cast<int>(
              detail::to_int(g.substr(paren + 1, close - paren - 1), line_no, "baseline"));
          baseline_given = true;
          g = g.substr(0, paren);
        }
        sig.gain = detail::to_double(g, line_no, "gain");
      }
      if (!(sig.gain > 0.0)) sig.gain = kDefaultGain;
      if (tokens.size() >= 4)
        sig.adc_resolution = static_cast<int>(detail::to_int(tokens[3], line_no, "ADC resolution"));
      if (tokens.size() >= 5)
        sig.adc_zero = static_cast<int>(detail::to_int(tokens[4], line_no, "ADC zero"));
      if (tokens.size() >= 6)
        sig.initial_value = static_cast<int>(detail::to_int(tokens[5], line_no, "initial value"));
      if (!baseline_given) sig.baseline = sig.adc_zero;
      if (tokens.size() >= 9) sig.description = std::string(line.substr(detail::token_offset(line, 8)));
      while (!sig.description.empty() && std::isspace(static_cast<unsigned char>(sig.description.back())))
        sig.description.pop_back();
      info.signals.push_back(std::move(sig));
    }
    if (end == text.size()) break;
  }
  if (!have_record_line) throw ParseError(line_no, "missing record line");
  if (info.signals.size() != declared_signals)
    throw ParseError(line_no, "expected " + std::to_string(declared_signals) + " signal lines, found " +
                                  std::to_string(info.signals.size()));
  return info;
}

inline std::string format_header(const HeaderInfo& info) {
  std::ostringstream out;
  out << info.record_id << ' ' << info.signals.size() << ' ' << info.fs << ' ' << info.n_samples << '\n';
  for (const auto& s : info.signals) {
    out << s.file << ' ' << s.format << ' ' << s.gain << '(' << s.baseline << ")/mV " << s.adc_resolution << ' '
        << s.adc_zero << ' ' << s.initial_value << " 0 0 " << s.description << '\n';
  }
  return out.str();
}

/// Unpacks format 212: pairs of 12-bit two's-complement samples in 3 bytes,
/// channel-interleaved. Returns n_samples * n_channels values, frame-major.
inline std::vector<int> unpack_212(std::span<const std::uint8_t> bytes, std::size_t n_channels,
                                   std::size_t n_samples) {
  const std::size_t count = n_channels * n_samples;
  const std::size_t need = (count * 3 + 1) / 2;
  if (bytes.size() < need) throw TruncatedDataError(need, bytes.size());
  std::vector<int> out(count);
  auto sign12 = [](int v) { return (v & 0x800) ? v - 0x1000 : v; };
  for (std::size_t k = 0, b = 0; k < count; k += 2, b += 3) {
    const int b0 = bytes[b], b1 = bytes[b + 1];
    out[k] = sign12(b0 | ((b1 & 0x0F) << 8));
    if (k + 1 < count) out[k + 1] = sign12(bytes[b + 2] | ((b1 & 0xF0) << 4));
  }
  return out;
}

inline std::vector<std::uint8_t> pack_212(std::span<const int> samples) {
  std::vector<std::uint8_t> out((samples.size() * 3 + 1) / 2, 0);
  for (std::size_t k = 0, b = 0; k < samples.size(); k += 2, b += 3) {
    const int s0 = samples[k] & 0xFFF;
    const int s1 = k + 1 < samples.size() ? samples[k + 1] & 0xFFF : 0;
    out[b] = static_cast<std::uint8_t>(s0 & 0xFF);
    out[b + 1] = static_cast<std::uint8_t>(((s0 >> 8) & 0x0F) | ((s1 >> 4) & 0xF0));
    if (k + 1 < samples.size()) out[b + 2] = static_cast<std::uint8_t>(s1 & 0xFF);
  }
  return out;
}

/// Unpacks format 16: little-endian 16-bit two's-complement samples.
inline std::vector<int> unpack_16(std::span<const std::uint8_t> bytes, std::size_t n_channels,
                                  std::size_t n_samples) {
  const std::size_t count = n_channels * n_samples;
  if (bytes.size() < count * 2) throw TruncatedDataError(count * 2, bytes.size());
  std::vector<int> out(count);
  for (std::size_t k = 0; k < count; ++k)
    out[k] = static_cast<std::int16_t>(static_cast<std::uint16_t>(bytes[2 * k] | (bytes[2 * k + 1] << 8)));
  return out;
}

inline std::vector<std::uint8_t> pack_16(std::span<const int> samples) {
  std::vector<std::uint8_t> out(samples.size() * 2);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto v = static_cast<std::uint16_t>(static_cast<std::int16_t>(samples[k]));
    out[2 * k] = static_cast<std::uint8_t>(v & 0xFF);
    out[2 * k + 1] = static_cast<std::uint8_t>(v >> 8);
  }
  return out;
}

// MIT annotation type codes (ecgcodes.h), index = code.
inline constexpr std::array<std::string_view, 42> kAnnotationMnemonics{
    "",  "N", "L", "R", "a", "V", "F", "J", "A", "S", "E", "j", "/", "Q", "~", "",  "|", "",  "s", "T", "*",
    "D", "\"", "=", "p", "B", "^", "t", "+", "u", "?", "!", "[", "]", "e", "n", "@", "x", "f", "(", ")", "r"};

inline std::optional<int> annotation_code(std::string_view symbol) {
  for (std::size_t c = 1; c < kAnnotationMnemonics.size(); ++c)
    if (!kAnnotationMnemonics[c].empty() && kAnnotationMnemonics[c] == symbol) return static_cast<int>(c);
  return std::nullopt;
}

namespace detail {
inline constexpr int kSkip = 59, kNum = 60, kSub = 61, kChn = 62, kAux = 63;
}

/// Decodes an MIT-format annotation stream. Pseudo-annotations (SKIP, NUM,
/// SUB, CHN, AUX) are consumed; unknown codes are skipped with a warning.
inline std::vector<Annotation> parse_annotations(std::span<const std::uint8_t> bytes,
                                                 std::vector<std::string>* warnings = nullptr) {
  std::vector<Annotation> out;
  long long time = 0;
  std::size_t i = 0;
  auto word_at = [&](std::size_t k) { return static_cast<unsigned>(bytes[k] | (bytes[k + 1] << 8)); };
  while (i + 1 < bytes.size()) {
    const unsigned word = word_at(i);
    i += 2;
    if (word == 0) break;  // end of stream
    const int code = static_cast<int>(word >> 10);
    const int low = static_cast<int>(word & 0x3FF);
    switch (code) {
      case detail::kSkip: {
        if (i + 4 > bytes.size()) throw AnnotationError("truncated SKIP annotation");
        // PDP-11 long: high 16-bit word first.
        const auto hi = word_at(i), lo = word_at(i + 2);
        i += 4;
        const auto interval = static_cast<std::int32_t>((hi << 16) | lo);
        time += interval;
        if (time < 0 || interval < 0) throw AnnotationError("annotation sample indices decrease");
        break;
      }
      case detail::kNum:
      case detail::kSub:
      case detail::kChn:
        break;
      case detail::kAux:
        i += static_cast<std::size_t>(low + (low & 1));
        break;
      default: {
        time += low;
        if (code >= 1 && code < static_cast<int>(kAnnotationMnemonics.size()) &&
            !kAnnotationMnemonics[static_cast<std::size_t>(code)].empty()) {
          out.push_back({static_cast<std::size_t>(time), std::string(kAnnotationMnemonics[static_cast<std::size_t>(code)])});
        } else if (warnings) {
          warnings->push_back("skipping unknown annotation code " + std::to_string(code) + " at sample " +
                              std::to_string(time));
        }
      }
    }
  }
  return out;
}

/// Encodes annotations as an MIT stream (used for fixtures and round trips).
inline std::vector<std::uint8_t> write_annotations(std::span<const Annotation> anns) {
  std::vector<std::uint8_t> out;
  auto put_word = [&](unsigned w) {
    out.push_back(static_cast<std::uint8_t>(w & 0xFF));
    out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xFF));
  };
  std::size_t prev = 0;
  for (const auto& a : anns) {
    if (a.sample < prev) throw AnnotationError("annotations must be sorted by sample");
    const auto code = annotation_code(a.symbol);
    if (!code) throw AnnotationError("no MIT code for symbol '" + a.symbol + "'");
    std::size_t diff = a.sample - prev;
    if (diff > 0x3FF) {
      put_word(static_cast<unsigned>(detail::kSkip) << 10);
      const auto v = static_cast<std::uint32_t>(diff);
      put_word(v >> 16);
      put_word(v & 0xFFFF);
      diff = 0;
    }
    put_word((static_cast<unsigned>(*code) << 10) | static_cast<unsigned>(diff));
    prev = a.sample;
  }
  put_word(0);
  return out;
}

/// Symbol -> AAMI class table. The default is the EC57 grouping; a JSON object
/// {"N": ["N","L",...], "S": [...], ...} replaces it wholesale.
class AamiMap {
 public:
  AamiMap() {
    const std::pair<AamiLabel, std::vector<std::string>> defaults[] = {
        {AamiLabel::N, {"N", "L", "R", "e", "j"}},
        {AamiLabel::S, {"A", "a", "J", "S"}},
        {AamiLabel::V, {"V", "E"}},
        {AamiLabel::F, {"F"}},
        {AamiLabel::Q, {"/", "f", "Q"}},
    };
    for (const auto& [label, symbols] : defaults)
      for (const auto& s : symbols) table_[s] = label;
  }

  static AamiMap from_json(const nlohmann::json& j) {
    AamiMap m;
    m.table_.clear();
    for (const auto& [cls, symbols] : j.items()) {
      if (cls.size() != 1 || !label_from_char(cls[0])) throw ParameterError("unknown AAMI class '" + cls + "'");
      for (const auto& s : symbols) {
        const auto sym = s.get<std::string>();
        if (m.table_.count(sym)) throw ParameterError("symbol '" + sym + "' mapped twice");
        m.table_[sym] = *label_from_char(cls[0]);
      }
    }
    return m;
  }

  std::optional<AamiLabel> map(std::string_view symbol) const {
    const auto it = table_.find(std::string(symbol));
    if (it == table_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::map<std::string, AamiLabel> table_;
};

inline std::optional<AamiLabel> map_to_aami(std::string_view symbol) {
  static const AamiMap table;
  return table.map(symbol);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Decodes raw ADC samples from the signal files named in `header`.
/// Returns n_samples x n_signals raw values. `max_samples` truncates (0 = all).
inline std::vector<std::vector<int>> decode_signals(const HeaderInfo& header,
                                                    const std::map<std::string, std::vector<std::uint8_t>>& files,
                                                    std::size_t max_samples = 0) {
  // Group signals by file; signals sharing a file are interleaved in order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t s = 0; s < header.signals.size(); ++s) {
    const auto& f = header.signals[s].file;
    if (!groups.count(f)) order.push_back(f);
    groups[f].push_back(s);
  }
  std::size_t n = header.n_samples;
  std::vector<std::vector<int>> raw(header.signals.size());
  for (const auto& f : order) {
    const auto& members = groups[f];
    const int fmt = header.signals[members.front()].format;
    for (auto m : members)
      if (header.signals[m].format != fmt) throw UnsupportedFormatError(header.signals[m].format);
    const auto it = files.find(f);
    if (it == files.end()) throw std::runtime_error("missing signal file " + f);
    const auto& bytes = it->second;
    std::size_t frames = n;
    if (frames == 0) frames = fmt == 212 ? bytes.size() * 2 / 3 / members.size() : bytes.size() / 2 / members.size();
    if (max_samples > 0) frames = std::min(frames, max_samples);
    const auto interleaved =
        fmt == 212 ? unpack_212(bytes, members.size(), frames) : unpack_16(bytes, members.size(), frames);
    for (std::size_t k = 0; k < members.size(); ++k) {
      auto& dst = raw[members[k]];
      dst.resize(frames);
      for (std::size_t t = 0; t < frames; ++t) dst[t] = interleaved[t * members.size() + k];
    }
  }
  return raw;
}

/// Builds a gain-corrected record: value_mV = (raw - baseline) / gain.
inline EcgRecord assemble_record(const HeaderInfo& header, const std::vector<std::vector<int>>& raw,
                                 std::vector<Annotation> annotations) {
  EcgRecord rec;
  rec.record_id = header.record_id;
  rec.fs = header.fs;
  const std::size_t n = raw.empty() ? 0 : raw.front().size();
  if (n == 0) throw ParameterError("record " + header.record_id + " has no samples");
  rec.signal.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(raw.size()));
  for (std::size_t c = 0; c < raw.size(); ++c) {
    const auto& spec = header.signals[c];
    const double gain = spec.gain > 0.0 ? spec.gain : kDefaultGain;
    rec.channels.push_back({spec.description.empty() ? spec.file : spec.description, gain, spec.baseline});
    for (std::size_t t = 0; t < n; ++t)
      rec.signal(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = (raw[c][t] - spec.baseline) / gain;
  }
  std::erase_if(annotations, [n](const Annotation& a) { return a.sample >= n; });
  rec.annotations = std::move(annotations);
  return rec;
}

struct LoadOptions {
  std::string annotator = "atr";
  double max_seconds = 0.0;  // 0 = whole record
  std::vector<std::string>* warnings = nullptr;
};

inline EcgRecord load_record(const std::filesystem::path& dir, const std::string& name, const LoadOptions& opt = {}) {
  const auto header_bytes = read_file(dir / (name + ".hea"));
  const auto header = parse_header(std::string_view(reinterpret_cast<const char*>(header_bytes.data()), header_bytes.size()));
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& s : header.signals)
    if (!files.count(s.file)) files[s.file] = read_file(dir / s.file);
  const std::size_t max_samples =
      opt.max_seconds > 0.0 ? static_cast<std::size_t>(std::llround(opt.max_seconds * header.fs)) : 0;
  const auto raw = decode_signals(header, files, max_samples);
  std::vector<Annotation> anns;
  const auto atr = dir / (name + "." + opt.annotator);
  if (std::filesystem::exists(atr)) anns = parse_annotations(read_file(atr), opt.warnings);
  return assemble_record(header, raw, std::move(anns));
}

/// Writes a record as `<name>.hea`, `<name>.dat` (format 212 or 16, all
/// channels interleaved in one file) and optionally `<name>.atr`.
inline void write_record(const std::filesystem::path& dir, const std::string& name, double fs,
                         const std::vector<std::vector<int>>& raw, const std::vector<std::string>& channel_names,
                         double gain, int baseline, std::span<const Annotation> annotations, int format = 212) {
  if (format != 212 && format != 16) throw UnsupportedFormatError(format);
  std::filesystem::create_directories(dir);
  HeaderInfo h;
  h.record_id = name;
  h.fs = fs;
  h.n_samples = raw.empty() ? 0 : raw.front().size();
  std::vector<int> interleaved;
  interleaved.reserve(h.n_samples * raw.size());
  for (std::size_t t = 0; t < h.n_samples; ++t)
    for (const auto& ch : raw) interleaved.push_back(ch[t]);
  for (std::size_t c = 0; c < raw.size(); ++c) {
    SignalSpec s;
    s.file = name + ".dat";
    s.format = format;
    s.gain = gain;
    s.baseline = baseline;
    s.adc_zero = baseline;
    s.adc_resolution = format == 212 ? 12 : 16;
    s.initial_value = h.n_samples ? raw[c][0] : 0;
    s.description = c < channel_names.size() ? channel_names[c] : "ch" + std::to_string(c);
    h.signals.push_back(s);
  }
  const auto text = format_header(h);
  write_file(dir / (name + ".hea"), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  write_file(dir / (name + ".dat"), format == 212 ? pack_212(interleaved) : pack_16(interleaved));
  if (!annotations.empty()) write_file(dir / (name + ".atr"), write_annotations(annotations));
}

/// Record names (`*.hea` stems) in a directory, sorted.
inline std::vector<std::string> list_records(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".hea") names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace ecg::wfdb
