#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace telemote::net {

/// Thin RAII wrapper over a connected TCP socket.
class TcpStream {
public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {}
    TcpStream(TcpStream&& other) noexcept;
    TcpStream& operator=(TcpStream&& other) noexcept;
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;
    ~TcpStream();

    static std::optional<TcpStream> connect(const std::string& host, std::uint16_t port,
                                            int timeout_ms = 5000);

    bool valid() const { return fd_ >= 0; }

    /// Writes the whole span, retrying short writes. False on error.
    bool write_all(std::span<const std::uint8_t> data);

    /// Reads up to buf.size() bytes. Returns 0 on clean EOF, -1 on error/timeout.
    std::ptrdiff_t read_some(std::span<std::uint8_t> buf);

    /// Reads exactly buf.size() bytes. False on EOF/error before completion.
    bool read_exact(std::span<std::uint8_t> buf);

    void set_read_timeout(int timeout_ms);
    void shutdown_write();
    void close();

private:
    int fd_ = -1;
};

/// Listening TCP socket; port 0 binds an ephemeral port.
class TcpListener {
public:
    TcpListener() = default;
    TcpListener(TcpListener&& other) noexcept;
    TcpListener& operator=(TcpListener&& other) noexcept;
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;
    ~TcpListener();

    static std::optional<TcpListener> bind(const std::string& host, std::uint16_t port);

    std::uint16_t port() const { return port_; }
    bool valid() const { return fd_ >= 0; }

    /// Blocks until a connection arrives; nullopt once the listener is closed.
    std::optional<TcpStream> accept();

    /// Closing from another thread unblocks accept().
    void close();

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

} // namespace telemote::net
