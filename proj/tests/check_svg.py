"""Parses every SVG in a directory with the standard XML reader."""
import pathlib
import sys
import xml.etree.ElementTree as ET

SVG = "{http://www.w3.org/2000/svg}svg"

files = sorted(pathlib.Path(sys.argv[1]).glob("*.svg"))
if len(files) != 5:
    sys.exit(f"expected 5 figures in {sys.argv[1]}, found {len(files)}")
for f in files:
    root = ET.parse(f).getroot()
    if root.tag != SVG:
        sys.exit(f"{f.name}: root element is {root.tag}")
    print(f"{f.name}: {sum(1 for _ in root.iter())} elements")
