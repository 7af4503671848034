from setuptools import setup

setup(
    name="mcusum",
    version="0.1.0",
    description="Quickest detection of an anomaly moving through a sensor network (mixture CUSUM).",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.8",
    keywords="cusum change-detection sequential-analysis sensor-networks",
    packages=["mcusum"],
    package_data={"mcusum": ["py.typed"]},
    install_requires=[
        "numpy>=1.21.0",
        "scipy>=1.7",
    ],
    entry_points={"console_scripts": ["mcusum = mcusum.cli:main"]},
    extras_require={
        "dev": [
            "pytest>=5",
            "pytest-cov",
            "coveralls",
            "black",
            "mypy",
            "pylint",
        ]
    },
)
