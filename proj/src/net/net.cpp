#include "spheroview/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <utility>

namespace spheroview::net {

using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kMaxHttpHeader = 16 * 1024;
constexpr Millis kHandshakeTimeout(2000);

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

// Owning socket with deadline-based reads.
class Socket {
 public:
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  void close() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }
  int fd() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }

  /// Appends whatever arrives before the deadline; false on timeout.
  bool read_some(std::vector<std::uint8_t>& out, Clock::time_point deadline) {
    if (fd_ < 0) throw NetError("connection closed");
    const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now()).count();
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(std::max<long long>(0, left)));
    if (r < 0) {
      if (errno == EINTR) return false;
      throw NetError(errno_text("poll"));
    }
    if (r == 0) return false;
    std::uint8_t buf[65536];
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n == 0) throw NetError("connection closed");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) return false;
      throw NetError(errno_text("recv"));
    }
    out.insert(out.end(), buf, buf + n);
    return true;
  }

  void write_all(const std::uint8_t* data, std::size_t size) {
    if (fd_ < 0) throw NetError("connection closed");
    while (size > 0) {
      const ssize_t n = ::send(fd_, data, size, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw NetError(errno_text("send"));
      }
      data += n;
      size -= static_cast<std::size_t>(n);
    }
  }
  void write_all(const std::string& s) { write_all(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()); }

 private:
  int fd_;
};

Clock::time_point deadline_after(Millis timeout) { return Clock::now() + timeout; }

class TcpConnection final : public Connection {
 public:
  TcpConnection(int fd, std::vector<std::uint8_t> initial) : sock_(fd) { decoder_.feed(initial); }

  void send(const transport::Message& msg) override {
    const auto bytes = transport::encode(msg);
    std::lock_guard lock(send_mutex_);
    sock_.write_all(bytes.data(), bytes.size());
  }

  std::optional<transport::Message> receive(Millis timeout) override {
    const auto deadline = deadline_after(timeout);
    std::vector<std::uint8_t> chunk;
    for (;;) {
      if (auto m = decoder_.next()) return m;
      chunk.clear();
      if (!sock_.read_some(chunk, deadline)) return std::nullopt;
      decoder_.feed(chunk);
    }
  }

  void close() override { sock_.close(); }
  bool websocket() const override { return false; }

 private:
  Socket sock_;
  transport::StreamDecoder decoder_;
  std::mutex send_mutex_;
};

enum : std::uint8_t {
  kOpContinuation = 0x0,
  kOpText = 0x1,
  kOpBinary = 0x2,
  kOpClose = 0x8,
  kOpPing = 0x9,
  kOpPong = 0xA,
};

class WebSocketConnection final : public Connection {
 public:
  WebSocketConnection(int fd, std::vector<std::uint8_t> initial, bool client)
      : sock_(fd), buf_(std::move(initial)), client_(client), rng_(std::random_device{}()) {}

  void send(const transport::Message& msg) override { send_frame(kOpBinary, transport::encode(msg)); }

  std::optional<transport::Message> receive(Millis timeout) override {
    const auto deadline = deadline_after(timeout);
    for (;;) {
      while (auto frame = take_frame()) {
        auto [fin, opcode, payload] = std::move(*frame);
        if (opcode == kOpPing) {
          send_frame(kOpPong, payload);
          continue;
        }
        if (opcode == kOpPong) continue;
        if (opcode == kOpClose) {
          try {
            send_frame(kOpClose, {});
          } catch (const NetError&) {
          }
          sock_.close();
          throw NetError("connection closed");
        }
        if (opcode != kOpContinuation) {
          message_.clear();
          message_opcode_ = opcode;
        }
        message_.insert(message_.end(), payload.begin(), payload.end());
        if (message_.size() > transport::kMaxPayload + transport::kHeaderSize)
          throw NetError("websocket message too large");
        if (!fin) continue;
        if (message_opcode_ != kOpBinary) continue;  // text frames carry nothing for us
        try {
          auto d = transport::decode(message_);
          if (d && d->consumed == message_.size()) return std::move(d->message);
        } catch (const transport::FramingError&) {
        }
        ++bad_messages_;
      }
      if (!sock_.read_some(buf_, deadline)) return std::nullopt;
    }
  }

  void close() override {
    try {
      send_frame(kOpClose, {});
    } catch (const NetError&) {
    }
    sock_.close();
  }
  bool websocket() const override { return true; }

 private:
  struct Frame {
    bool fin;
    std::uint8_t opcode;
    std::vector<std::uint8_t> payload;
  };

  std::optional<Frame> take_frame() {
    if (buf_.size() < 2) return std::nullopt;
    const bool fin = (buf_[0] & 0x80) != 0;
    const std::uint8_t opcode = buf_[0] & 0x0F;
    const bool masked = (buf_[1] & 0x80) != 0;
    if (masked == client_) throw NetError(client_ ? "server frames must not be masked" : "client frames must be masked");
    std::uint64_t len = buf_[1] & 0x7F;
    std::size_t pos = 2;
    if (len == 126) {
      if (buf_.size() < 4) return std::nullopt;
      len = (std::uint64_t(buf_[2]) << 8) | buf_[3];
      pos = 4;
    } else if (len == 127) {
      if (buf_.size() < 10) return std::nullopt;
      len = 0;
      for (int i = 0; i < 8; ++i) len = (len << 8) | buf_[2 + i];
      pos = 10;
    }
    if (len > transport::kMaxPayload + transport::kHeaderSize) throw NetError("websocket frame too large");
    std::uint8_t mask[4] = {0, 0, 0, 0};
    if (masked) {
      if (buf_.size() < pos + 4) return std::nullopt;
      std::copy_n(buf_.begin() + static_cast<std::ptrdiff_t>(pos), 4, mask);
      pos += 4;
    }
    if (buf_.size() < pos + len) return std::nullopt;
    Frame f{fin, opcode, {}};
    f.payload.assign(buf_.begin() + static_cast<std::ptrdiff_t>(pos),
                     buf_.begin() + static_cast<std::ptrdiff_t>(pos + len));
    if (masked)
      for (std::size_t i = 0; i < f.payload.size(); ++i) f.payload[i] ^= mask[i % 4];
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos + len));
    return f;
  }

  void send_frame(std::uint8_t opcode, const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> out;
    out.reserve(payload.size() + 14);
    out.push_back(static_cast<std::uint8_t>(0x80 | opcode));
    const std::uint8_t mask_bit = client_ ? 0x80 : 0x00;
    const std::size_t n = payload.size();
    if (n < 126) {
      out.push_back(static_cast<std::uint8_t>(mask_bit | n));
    } else if (n <= 0xFFFF) {
      out.push_back(mask_bit | 126);
      out.push_back(static_cast<std::uint8_t>(n >> 8));
      out.push_back(static_cast<std::uint8_t>(n));
    } else {
      out.push_back(mask_bit | 127);
      for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(std::uint64_t(n) >> (8 * i)));
    }
    std::lock_guard lock(send_mutex_);
    if (client_) {
      std::uint8_t mask[4];
      for (auto& m : mask) m = static_cast<std::uint8_t>(rng_());
      out.insert(out.end(), mask, mask + 4);
      for (std::size_t i = 0; i < n; ++i) out.push_back(payload[i] ^ mask[i % 4]);
    } else {
      out.insert(out.end(), payload.begin(), payload.end());
    }
    sock_.write_all(out.data(), out.size());
  }

  Socket sock_;
  std::vector<std::uint8_t> buf_;
  bool client_;
  std::mt19937 rng_;
  std::mutex send_mutex_;
  std::vector<std::uint8_t> message_;
  std::uint8_t message_opcode_ = kOpBinary;
  std::size_t bad_messages_ = 0;
};

std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct HttpHead {
  std::string start_line;
  std::vector<std::pair<std::string, std::string>> headers;  // names lower-cased
  std::vector<std::uint8_t> rest;                           // bytes after the blank line

  std::string header(const std::string& name) const {
    for (const auto& [k, v] : headers)
      if (k == name) return v;
    return {};
  }
};

// Reads until the blank line that ends an HTTP head.
HttpHead read_http_head(Socket& sock, std::vector<std::uint8_t> buf, Clock::time_point deadline) {
  static const std::string kEnd = "\r\n\r\n";
  for (;;) {
    const auto it = std::search(buf.begin(), buf.end(), kEnd.begin(), kEnd.end());
    if (it != buf.end()) {
      HttpHead head;
      std::istringstream in(std::string(buf.begin(), it));
      std::getline(in, head.start_line);
      head.start_line = trim(head.start_line);
      for (std::string line; std::getline(in, line);) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        head.headers.emplace_back(lower(trim(line.substr(0, colon))), trim(line.substr(colon + 1)));
      }
      head.rest.assign(it + 4, buf.end());
      return head;
    }
    if (buf.size() > kMaxHttpHeader) throw NetError("http header too large");
    if (!sock.read_some(buf, deadline)) throw NetError("timed out waiting for http header");
  }
}

bool header_has_token(const std::string& value, const std::string& token) {
  std::istringstream in(lower(value));
  for (std::string part; std::getline(in, part, ',');)
    if (trim(part) == token) return true;
  return false;
}

std::string content_type(const std::filesystem::path& p) {
  const std::string ext = lower(p.extension().string());
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript; charset=utf-8";
  if (ext == ".css") return "text/css; charset=utf-8";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

void serve_static(Socket& sock, const HttpHead& head, const std::optional<std::filesystem::path>& root) {
  std::istringstream in(head.start_line);
  std::string method, target;
  in >> method >> target;
  target = target.substr(0, target.find('?'));
  auto respond = [&](const std::string& status, const std::string& type, const std::string& body) {
    std::ostringstream out;
    out << "HTTP/1.1 " << status << "\r\nContent-Type: " << type << "\r\nContent-Length: " << body.size()
        << "\r\nConnection: close\r\n\r\n"
        << body;
    sock.write_all(out.str());
  };
  if (!root || target.find("..") != std::string::npos || target.empty() || target[0] != '/') {
    respond("404 Not Found", "text/plain", "not found\n");
    return;
  }
  std::filesystem::path file = *root / target.substr(1);
  if (target == "/") file = *root / "index.html";
  std::ifstream f(file, std::ios::binary);
  if (!f || std::filesystem::is_directory(file)) {
    respond("404 Not Found", "text/plain", "not found\n");
    return;
  }
  std::ostringstream body;
  body << f.rdbuf();
  respond("200 OK", content_type(file), body.str());
}

int connect_socket(const std::string& host, std::uint16_t port, Millis timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw NetError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  std::string last_error = "no address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
      int err = 0;
      socklen_t len = sizeof err;
      if (rc == 1 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0)
        rc = 0;
      else {
        errno = rc == 0 ? ETIMEDOUT : err;
        rc = -1;
      }
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags);
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      ::freeaddrinfo(res);
      return fd;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw NetError("cannot connect to " + host + ":" + service + ": " + last_error);
}

}  // namespace

std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string websocket_accept(const std::string& client_key) {
  const std::string input = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(input.data(), input.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw Error("sha1 digest failed");
  return base64(digest, len);
}

std::uint16_t default_port() {
  if (const char* env = std::getenv("SPHEROVIEW_PORT")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v > 0 && v < 65536) return static_cast<std::uint16_t>(v);
  }
  return 8765;
}

std::unique_ptr<Connection> connect_tcp(const std::string& host, std::uint16_t port, Millis timeout) {
  return std::make_unique<TcpConnection>(connect_socket(host, port, timeout), std::vector<std::uint8_t>{});
}

std::unique_ptr<Connection> connect_websocket(const std::string& host, std::uint16_t port, const std::string& path,
                                              Millis timeout) {
  const int fd = connect_socket(host, port, timeout);
  Socket sock(fd);
  std::random_device rd;
  unsigned char nonce[16];
  for (auto& b : nonce) b = static_cast<unsigned char>(rd());
  const std::string key = base64(nonce, sizeof nonce);
  std::ostringstream req;
  req << "GET " << path << " HTTP/1.1\r\nHost: " << host << ":" << port
      << "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " << key
      << "\r\nSec-WebSocket-Version: 13\r\n\r\n";
  sock.write_all(req.str());
  HttpHead head = read_http_head(sock, {}, deadline_after(timeout));
  if (head.start_line.find(" 101") == std::string::npos) throw NetError("websocket upgrade refused: " + head.start_line);
  if (head.header("sec-websocket-accept") != websocket_accept(key)) throw NetError("websocket accept key mismatch");
  return std::make_unique<WebSocketConnection>(sock.release(), std::move(head.rest), true);
}

Listener::Listener(std::uint16_t port, std::optional<std::filesystem::path> ui_dir) : ui_dir_(std::move(ui_dir)) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw NetError(errno_text("socket"));
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    const std::string msg = errno_text("bind");
    ::close(fd_);
    throw NetError(msg);
  }
  if (::listen(fd_, 8) < 0) {
    const std::string msg = errno_text("listen");
    ::close(fd_);
    throw NetError(msg);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Connection> Listener::accept(Millis timeout) {
  const auto deadline = deadline_after(timeout);
  for (;;) {
    const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now()).count();
    if (left < 0) return nullptr;
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left));
    if (r <= 0) {
      if (r < 0 && errno != EINTR) throw NetError(errno_text("poll"));
      if (r == 0) return nullptr;
      continue;
    }
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    Socket sock(fd);
    try {
      // Sniff the carrier from the first bytes.
      std::vector<std::uint8_t> first;
      const auto hs_deadline = deadline_after(kHandshakeTimeout);
      while (first.size() < 4) {
        if (!sock.read_some(first, hs_deadline)) throw NetError("handshake timeout");
        if (first[0] == transport::kMagic0) break;
      }
      if (first[0] == transport::kMagic0) return std::make_unique<TcpConnection>(sock.release(), std::move(first));
      if (std::string(first.begin(), first.begin() + 4) != "GET ") continue;
      const HttpHead head = read_http_head(sock, std::move(first), hs_deadline);
      if (header_has_token(head.header("upgrade"), "websocket") && !head.header("sec-websocket-key").empty()) {
        std::ostringstream resp;
        resp << "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
             << "Sec-WebSocket-Accept: " << websocket_accept(head.header("sec-websocket-key")) << "\r\n\r\n";
        sock.write_all(resp.str());
        return std::make_unique<WebSocketConnection>(sock.release(), head.rest, false);
      }
      serve_static(sock, head, ui_dir_);
    } catch (const NetError&) {
      // A misbehaving peer must not take the listener down.
    }
  }
}

transport::OffsetEstimate measure_offset(Connection& conn, Millis timeout,
                                         const std::function<void(transport::Message&&)>& other) {
  std::vector<transport::ClockSample> samples;
  for (int i = 0; i < transport::kClockExchanges; ++i) {
    const std::int64_t t1 = now_ns();
    conn.send(transport::to_message(transport::ClockMsg{static_cast<std::uint64_t>(t1), 0, 0},
                                    transport::MsgType::kClockPing));
    const auto deadline = deadline_after(timeout);
    for (;;) {
      const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
      if (left.count() < 0) throw NetError("clock exchange timed out");
      auto m = conn.receive(left);
      if (!m) continue;
      if (m->type == transport::MsgType::kClockPong) {
        const auto c = transport::parse_clock(*m);
        if (static_cast<std::int64_t>(c.t1) != t1) continue;  // stale pong
        samples.push_back({t1, static_cast<std::int64_t>(c.t2), static_cast<std::int64_t>(c.t3), now_ns()});
        break;
      }
      if (other) other(std::move(*m));
    }
  }
  return transport::estimate_offset(samples);
}

transport::Message answer_ping(const transport::Message& ping, std::int64_t t2) {
  auto c = transport::parse_clock(ping);
  if (ping.type != transport::MsgType::kClockPing) throw transport::FramingError("expected a clock ping");
  c.t2 = static_cast<std::uint64_t>(t2);
  c.t3 = static_cast<std::uint64_t>(now_ns());
  return transport::to_message(c, transport::MsgType::kClockPong);
}

}  // namespace spheroview::net
