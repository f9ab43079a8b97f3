from setuptools import setup, find_packages

setup(
    name="smpq-search",
    version="1.0.0",
    description="Поиск политики смешанной точности на основе значений Шепли (SMPQ) и DMPQ",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["manage"],
    install_requires=[
        # Основные зависимости
        "numpy>=1.24.0",
        "PyYAML>=6.0",
        "python-dotenv>=0.19.0",
        "click>=8.1.0",

        # Таблицы и артефакты
        "pandas>=2.1.3",
    ],
    extras_require={
        'dev': [
            "pytest>=7.4.3",
            "pytest-cov>=4.1.0",
            "scipy>=1.10.0",
            "black>=23.11.0",
            "flake8>=6.1.0",
            "mypy>=1.7.1",
        ],
    },
    entry_points={
        'console_scripts': [
            'smpq=manage:cli',
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: POSIX :: Linux",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires=">=3.9",
    include_package_data=True,
    zip_safe=False,
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
)
