"""Protocol test double: a neo-oracle/1 server that always answers label 0.

Deliberately free of project imports so it exercises the wire format alone.
Malformed request lines draw error replies when they carry a usable id.
"""

import base64
import json
import sys


def main():
    sys.stdout.write(json.dumps({"proto": "neo-oracle/1", "num_classes": 2}) + "\n")
    sys.stdout.flush()
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        rid = None
        try:
            msg = json.loads(line)
            rid = msg.get("id")
            if not isinstance(rid, int):
                continue  # nothing useful to reply to
            data = base64.b64decode(msg["png"], validate=True)
            if not data.startswith(b"\x89PNG\r\n\x1a\n"):
                raise ValueError("payload is not a PNG")
            reply = {"id": rid, "label": 0}
        except Exception as exc:  # noqa: BLE001
            if not isinstance(rid, int):
                continue
            reply = {"id": rid, "error": f"{type(exc).__name__}: {exc}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
