"""Hand-built HTTP request payloads and the hostname each must yield (None: NoHost)."""

CORPUS = [
    (b"GET / HTTP/1.1\r\nHost: Example.COM\r\n\r\n", "example.com"),
    (b"POST /x HTTP/1.0\r\nhost: a.b.c:8080\r\n\r\n", "a.b.c"),
    (b"HTTP/1.1 200 OK\r\nHost: x.com\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHOST: upper.example\r\n\r\n", "upper.example"),
    (b"GET / HTTP/1.1\r\nhOsT: mixed.example\r\n\r\n", "mixed.example"),
    (b"GET / HTTP/1.1\r\nHost:nospace.example\r\n\r\n", "nospace.example"),
    (b"GET / HTTP/1.1\r\nHost:    spaces.example   \r\n\r\n", "spaces.example"),
    (b"GET / HTTP/1.1\r\nHost:\ttab.example\t\r\n\r\n", "tab.example"),
    (b"GET / HTTP/1.1\r\nHost: port.example:80\r\n\r\n", "port.example"),
    (b"GET / HTTP/1.1\r\nHost: port.example:65535\r\n\r\n", "port.example"),
    (b"GET / HTTP/1.1\r\nHost: emptyport.example:\r\n\r\n", "emptyport.example"),
    (b"GET / HTTP/1.1\r\nHost: dot.example.\r\n\r\n", "dot.example"),
    (b"GET / HTTP/1.1\r\nHost: dot.example.:8080\r\n\r\n", "dot.example"),
    (b"GET / HTTP/1.1\nHost: lf-only.example\n\n", "lf-only.example"),
    (b"GET / HTTP/1.1\r\nHost: first.example\r\nHost: second.example\r\n\r\n", "first.example"),
    (b"GET / HTTP/1.1\r\nUser-Agent: x\r\nAccept: */*\r\nHost: later.example\r\n\r\n", "later.example"),
    (b"GET / HTTP/1.1\r\nHost:\r\n fold.example\r\n\r\n", "fold.example"),
    (b"GET / HTTP/1.1\r\nHost: \r\n\tfold-tab.example\r\n\r\n", "fold-tab.example"),
    (b"GET / HTTP/1.1\r\nHost: a.example\r\n b.example\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nX-Long: aaa\r\n bbb\r\nHost: after-fold.example\r\n\r\n", "after-fold.example"),
    (b"HEAD /index.html HTTP/1.1\r\nHost: head.example\r\n\r\n", "head.example"),
    (b"PUT /up HTTP/1.1\r\nHost: put.example\r\n\r\n", "put.example"),
    (b"DELETE /r/1 HTTP/1.1\r\nHost: del.example\r\n\r\n", "del.example"),
    (b"OPTIONS * HTTP/1.1\r\nHost: opt.example\r\n\r\n", "opt.example"),
    (b"CONNECT tunnel.example:443 HTTP/1.1\r\nHost: tunnel.example:443\r\n\r\n", "tunnel.example"),
    (b"PATCH /p HTTP/1.0\r\nHost: patch.example\r\n\r\n", "patch.example"),
    (b"GET http://abs.example/x HTTP/1.1\r\nHost: abs.example\r\n\r\n", "abs.example"),
    (b"GET /?q=a%20b&x=1 HTTP/1.1\r\nHost: query.example\r\n\r\n", "query.example"),
    (b"\r\nGET / HTTP/1.1\r\nHost: leading-crlf.example\r\n\r\n", "leading-crlf.example"),
    (b"GET / HTTP/1.1\r\nHost: 192.168.1.10:8000\r\n\r\n", "192.168.1.10"),
    (b"GET / HTTP/1.1\r\nHost: under_score.example\r\n\r\n", "under_score.example"),
    (b"GET / HTTP/1.1\r\nHost: dash-ed.ex-ample.com\r\n\r\n", "dash-ed.ex-ample.com"),
    (b"GET / HTTP/1.1\r\nHost: xn--bcher-kva.example\r\n\r\n", "xn--bcher-kva.example"),
    (b"GET / HTTP/1.1\r\nHost: localhost\r\n\r\n", "localhost"),
    (b"GET / HTTP/1.1\r\nHost: " + b"a" * 253 + b"\r\n\r\n", "a" * 253),
    (b"GET / HTTP/1.1\r\nHost: " + b"a" * 254 + b"\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHost: b\xc3\xbccher.example\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHost: bad host.example\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHost: [::1]:8080\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHost: user@evil.example\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHost: \r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHost: x.example:8o\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\n\r\nHost: body.example\r\n", None),
    (b"GET / HTTP/1.1\r\nAccept: */*\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHost: partial.exam", None),
    (b"GET / HTTP/1.1\r\nHost: complete.example\r\nAccept: */*", "complete.example"),
    (b"GET / HTTP/1.1\r\nHost : spaced-name.example\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nX-Host: not-host.example\r\n\r\n", None),
    (b"GET / HTTP/1.1\r\nHostname: not-host.example\r\n\r\n", None),
    (b"GET / HTTP/2.0\r\nHost: h2.example\r\n\r\n", None),
    (b"GET / HTTP/1.2\r\nHost: v12.example\r\n\r\n", None),
    (b"GET /\r\nHost: http09.example\r\n\r\n", None),
    (b"get / HTTP/1.1\r\nHost: lower-method.example\r\n\r\n", "lower-method.example"),
    (b"GET  / HTTP/1.1\r\nHost: double-space.example\r\n\r\n", None),
    (b"GET / http/1.1\r\nHost: lower-version.example\r\n\r\n", None),
    (b" GET / HTTP/1.1\r\nHost: leading-space.example\r\n\r\n", None),
    (b"", None),
    (b"\x16\x03\x01\x00\x05hello", None),
    (b"GET / HTTP/1.1\r\nHost: MiXeD.CaSe.Example.ORG:443\r\n\r\n", "mixed.case.example.org"),
    (b"GET / HTTP/1.1\r\nhost: cdn-01.static.example.net\r\nConnection: keep-alive\r\n\r\n",
     "cdn-01.static.example.net"),
]
