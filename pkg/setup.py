"""
momentlite
"""
from setuptools import setup
from pathlib import Path

__version__ = None
version_file = Path(__file__).parent / "momentlite" / "version.py"
exec(version_file.read_text())
assert isinstance(__version__, str)

readme = Path(__file__).parent / "README.md"
assert isinstance(readme, Path)
assert readme.exists(), readme
with open(str(readme), encoding='utf-8') as f:
    long_description = f.read()

keywords = list({
    'momentlite', 'moment queries', 'temporal localization', 'action localization', 'video',
    'ego4d', 'nms', 'soft-nms', 'softnms', 'simota', 'center sampling', 'label assignment',
    'tiou', 'mean average precision', 'map', 'recall', 'detad', 'diagnosis', 'false positives',
    'false negatives', 'near replicates', 'synthetic data',
})

keywords.sort(key=lambda x: x.lower())

with open('requirements.txt', 'r') as fi:
    requirements = [v.rstrip('\n') for v in fi.readlines() if v.strip()]

setup(
    name="momentlite",
    version=__version__,
    description="post-processing, label assignment and evaluation for temporal moment localization.",
    long_description=long_description,
    long_description_content_type='text/markdown',
    keywords=keywords,
    packages=["momentlite"],
    python_requires=">=3.8",
    include_package_data=True,
    data_files=[(".", ["README.md", "requirements.txt"])],
    platforms="any",
    install_requires=requirements,
    entry_points={"console_scripts": ["momentlite=momentlite.cli:main"]},
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Natural Language :: English",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
)
