#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
# Writes the golden wire frames with struct, independently of the C++ codec.
import os
import struct

HERE = os.path.dirname(os.path.abspath(__file__))


def frame(msg_type, request_id, payload):
    return b"DKD1" + struct.pack("<BQI", msg_type, request_id, len(payload)) + payload


def halves(values):
    return b"".join(struct.pack("<e", v) for v in values)


FIXTURES = {
    "logit_request.bin": frame(1, 7, struct.pack("<BHH", 2, 2, 3) + struct.pack("<6I", 1, 4, 5, 1, 6, 0)),
    "logit_response.bin": frame(
        2, 7, struct.pack("<HHI", 1, 2, 3) + halves([1.0, -2.0, 0.5, 0.0, 65504.0, -0.333251953125])
    ),
    "error.bin": frame(3, 9, "unknown role 7".encode("utf-8")),
    "model_info_request.bin": frame(4, 1, b""),
    "model_info_response.bin": frame(5, 1, struct.pack("<IIBHQ", 64, 64, 3, 64, 0x0123456789ABCDEF)),
}

if __name__ == "__main__":
    for name, data in FIXTURES.items():
        with open(os.path.join(HERE, name), "wb") as f:
            f.write(data)
