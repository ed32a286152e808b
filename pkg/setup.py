from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="cookie-walk-lab",
    version="0.3.0",
    author="AgentGino",
    author_email="himakar@qwik.tools",
    description="Simulate cookie random walks, estimate their speed and check coupling arguments",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/AgentGino/cookie-walk-lab",
    packages=find_packages(exclude=["tests"]),
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "tabulate>=0.9.0",
    ],
    extras_require={
        "test": [
            "pytest>=7.0",
            "hypothesis>=6.0",
            "freezegun>=1.2",
        ],
    },
    entry_points={
        "console_scripts": [
            "cookie-walk-lab=cookie_walk_lab.cli:main",
        ],
    },
)
