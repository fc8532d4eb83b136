#!/usr/bin/env python3
"""Answers any SNMP datagram with one canned sysDescr-style response.

Not a BER encoder; the fixed byte string is shaped like a GetResponse
closely enough for a banner grab.
"""
import sys

REPLY = (b"\x30\x29\x02\x01\x00\x04\x06public"
         b"\xa2\x1cVxWorks 5.4 SNMP agent ready")

sys.stdin.buffer.read()
sys.stdout.buffer.write(REPLY)
