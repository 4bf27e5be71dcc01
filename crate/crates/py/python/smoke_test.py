# SPDX-License-Identifier: Apache-2.0
# Copyright The inlb Authors
"""Smoke test for the inlb extension module."""

import struct

import inlb


def ip_checksum(hdr):
    s = sum(struct.unpack("!%dH" % (len(hdr) // 2), hdr))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def syn_frame(src, sport, dst, dport):
    tcp = struct.pack("!HHIIBBHHH", sport, dport, 1, 0, 5 << 4, 0x02, 65535, 0, 0)
    ip = bytearray(struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(tcp), 1, 0, 64, 6, 0,
                               bytes(map(int, src.split("."))), bytes(map(int, dst.split(".")))))
    struct.pack_into("!H", ip, 10, ip_checksum(bytes(ip)))
    pseudo = ip[12:20] + struct.pack("!BBH", 0, 6, len(tcp))
    tcp = tcp[:16] + struct.pack("!H", ip_checksum(bytes(pseudo) + tcp)) + tcp[18:]
    eth = bytes(6) + bytes(6) + b"\x08\x00"
    return eth + bytes(ip) + tcp


assert inlb.crc16(b"123456789") == 0xBB3D

p = inlb.ControlPayload(30080, "192.0.2.10", 80, ["10.0.1.1", "10.0.1.2", "10.0.1.3"])
wire = p.encode()
assert len(wire) == 12 + 4 * 3 == len(p)
assert inlb.ControlPayload.decode(wire) == p
try:
    inlb.ControlPayload.decode(b"\x00" + wire[1:])
    raise SystemExit("corrupt magic accepted")
except ValueError as e:
    assert "magic" in str(e), e

t = inlb.LpmTable.parse("0.0.0.0/0 192.0.2.254 1\n10.0.1.0/24 10.0.1.254 2\n")
assert t.lookup("10.0.1.7") == ("10.0.1.0/24", "10.0.1.254", 2)
assert len(t) == 2

r = inlb.Router("0.0.0.0/0 192.0.2.254 1\n10.0.1.0/24 10.0.1.254 2\n")
assert r.apply_control(p) == 1
out = r.process_frame(syn_frame("198.51.100.7", 40000, "192.0.2.10", 80))
assert out["action"] == "forward" and out["class"] == "incoming", out
assert out["selected"][1] in p.replica_addrs
assert out["frame"][30:34] == bytes(map(int, out["selected"][1].split(".")))
assert out["frame"][36:38] == struct.pack("!H", 30080)

rep = inlb.run_scenario('mode = "in_network"\ntotal_requests = 200\nper_hop_latency_ms = 0.1\n', seed=7)
assert rep["completed_requests"] == 200, rep
assert rep["affinity_violations"] == 0
assert not rep["invariant_violations"]
assert sum(rep["per_node_request_counts"].values()) == 200
csv = inlb.export_scenario('total_requests = 20\n', "csv", seed=7)
assert csv.startswith("node_id,requests\n")

print("inlb smoke test PASS: mean %.3f ms over %d requests"
      % (rep["mean_request_time_ms"], rep["completed_requests"]))
