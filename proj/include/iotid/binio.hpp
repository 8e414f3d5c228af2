#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace iotid {

// Little-endian binary writer/reader for model files. Doubles are written as
// raw IEEE-754 bytes so save/load round-trips are bit-exact.
class BinWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    void f64_vec(const std::vector<double>& v) {
        u64(v.size());
        raw(v.data(), v.size() * 8);
    }

    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + path);
        out.write(reinterpret_cast<const char*>(buf_.data()),
                  static_cast<std::streamsize>(buf_.size()));
    }

private:
    std::vector<std::uint8_t> buf_;
};

class BinReader {
public:
    explicit BinReader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}

    static BinReader load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open for reading: " + path);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        return BinReader(std::move(bytes));
    }

    std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
    std::int32_t i32() { std::int32_t v; raw(&v, 4); return v; }
    double f64() { double v; raw(&v, 8); return v; }

    std::string str() {
        std::uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    std::vector<double> f64_vec() {
        std::uint64_t n = u64();
        std::vector<double> v(n);
        raw(v.data(), n * 8);
        return v;
    }

    void raw(void* p, std::size_t n) {
        if (pos_ + n > buf_.size()) throw std::runtime_error("model file truncated");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

} // namespace iotid
